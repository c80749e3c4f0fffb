// Kept in its own test binary: it mutates the process environment.

use rlsa2c_core::envsim::EnvId;
use rlsa2c_core::trainer::{run, smooth_log, LOG_DIR_ENV};
use rlsa2c_core::{Algorithm, TrainConfig};

#[test]
fn log_dir_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = TrainConfig::new(Algorithm::Rlsna2c, EnvId::PointMass);
    c.workers = 4;
    c.seed = 9;
    c.total_timesteps = 100;
    c.log_dir = dir.path().join("from_config");
    std::env::set_var(LOG_DIR_ENV, dir.path().join("from_env"));
    let summary = run(c, None);
    std::env::remove_var(LOG_DIR_ENV);
    let summary = summary.unwrap();
    assert!(summary.log_path.starts_with(dir.path().join("from_env")));
    assert_eq!(
        summary.log_path.file_name().unwrap(),
        "rlsna2c_pointmass_seed9.csv"
    );
    let text = std::fs::read_to_string(&summary.log_path).unwrap();
    let smoothed = smooth_log(&text, 100).unwrap();
    assert_eq!(smoothed.lines().count(), 6);
}
