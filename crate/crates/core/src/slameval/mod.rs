//! ICP odometry, trajectory alignment, ATE/RPE and the attack comparison.

mod align;
mod compare;
mod icp;
mod trajectory;

pub use align::{ate, geodesic_angle, kabsch, rpe, umeyama_align, Rpe};
pub use icp::{icp_register, odometry, voxel_downsample, IcpConfig, IcpMetric, IcpResult, Odometry};
pub use trajectory::{Pose, Trajectory};
pub use compare::{
    attack_sequence, compare_attacks, evaluate_clean, parse_report_csv, plot_trajectories, render_table, report_csv_rows, AttackReport, AttackedSequence,
    CompareConfig, Method, MethodRun, QualityModels, ReportRow, REPORT_HEADER,
};
