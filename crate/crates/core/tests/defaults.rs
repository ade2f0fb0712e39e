use multibo_core::acquisition::DbsConfig;
use multibo_core::session::{SessionConfig, SessionState};
use multibo_core::warp::theta_bounds;

#[test]
fn optimizer_defaults() {
    let cfg = SessionConfig::new(theta_bounds(), 0);
    assert_eq!((cfg.budget, cfg.k, cfg.init_batches), (50, 4, 10));
    assert_eq!(cfg.dbs.spectral_threshold, 2.0);
    assert_eq!(cfg.dbs.ei_restarts, 50);
    assert_eq!(cfg.dbs.ei_raw_samples, 4096);
    assert_eq!(cfg.dbs.gamma_bridge, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    assert_eq!(cfg.dbs, DbsConfig::new(4));
}

#[test]
fn initial_design_size_and_bounds() {
    let cfg = SessionConfig::new(theta_bounds(), 9);
    let state = SessionState::new(cfg.clone()).unwrap();
    assert_eq!(state.init_design().len(), 40);
    assert!(state.init_design().iter().all(|x| cfg.bounds.contains(x)));
    assert_eq!(state.pending_points().unwrap().len(), 4);
    assert_eq!(SessionState::new(cfg).unwrap().init_design(), state.init_design());

    let mut small = SessionConfig::new(theta_bounds(), 9).with_k(2);
    small.init_batches = 1;
    let s = SessionState::new(small).unwrap();
    assert_eq!(s.init_design().len(), 2);
    assert_eq!(s.pending_points().unwrap().len(), 2);
}
