use super::*;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cmalab-unit-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn small(dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        resolution: 33,
        gamma: 0.0,
        eps: 0.0,
        f: "1".into(),
        k_max: 2,
        stride: 4,
        output_dir: dir,
        min_cells: 2.0,
        chains: ChainsConfig { base_points: 3, levels: 2, ..ChainsConfig::default() },
        engulf: EngulfConfig { pairs: 10, max_attempts: 2000 },
        cover: CoverConfig { families: 3, fields: 2, max_members: 8, ..CoverConfig::default() },
        badset: BadsetConfig { levels: 1, ..BadsetConfig::default() },
        ..ExperimentConfig::default()
    }
}

#[test]
fn sha256_known_vectors() {
    assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn config_from_toml() {
    let cfg = ExperimentConfig::from_toml(
        r#"
        n = 1
        resolution = 33
        eps_bar = "recipe(3)"
        p = [2.0, 4.0]
        [chains]
        base_points = 5
        "#,
    )
    .unwrap();
    assert_eq!(cfg.chains.base_points, 5);
    assert_eq!(cfg.chains.levels, 3);
    assert_eq!(cfg.eps_bar.resolve(1).unwrap(), crate::badset::eps_bar_recipe(1, 3.0));
    assert!((EpsBar::Keyword("recipe".into()).resolve(1).unwrap() - 1.0 / 288.0).abs() < 1e-15);
    assert_eq!(EpsBar::Value(1e-3).resolve(2).unwrap(), 1e-3);
    assert!(EpsBar::Keyword("guess".into()).resolve(1).is_err());
    assert!(EpsBar::Keyword("recipe(0.5)".into()).resolve(1).is_err());
    assert!(EpsBar::Value(0.0).resolve(1).is_err());
    assert!(ExperimentConfig::from_toml("resolutoin = 33").is_err());
    assert!(ExperimentConfig::from_toml("[chains]\nbase = 3").is_err());
}

#[test]
fn validation_rejects_before_writing() {
    let dir = scratch("invalid");
    let mut cfg = small(dir.clone());
    cfg.gamma = 0.6;
    assert!(matches!(run_pipeline(&cfg), Err(Error::InvalidInput(_))));
    assert!(!dir.exists());

    let bad = |f: fn(&mut ExperimentConfig)| {
        let mut c = small(dir.clone());
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.n = 3));
    assert!(bad(|c| c.resolution = 32));
    assert!(bad(|c| c.eps = 0.5));
    assert!(bad(|c| c.sigma = 1.0));
    assert!(bad(|c| c.p = vec![]));
    assert!(bad(|c| c.p = vec![0.5]));
    assert!(bad(|c| c.k_max = 0));
    assert!(bad(|c| c.stride = 0));
    assert!(bad(|c| c.mu0 = 0.5));
    assert!(bad(|c| c.f = "1 + 0.1*x".into()));
    assert!(bad(|c| c.f = "1 + ".into()));
    assert!(bad(|c| c.min_cells = 20.0));
    assert!(bad(|c| c.badset.inner_radius = 0.95));
    assert!(bad(|c| c.engulf.max_attempts = 1));
    assert!(!bad(|c| c.f = "1 + eps*x".into()));
    assert!(!dir.exists());
}

#[test]
fn instance_round_trip() {
    let dir = scratch("instance");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = small(dir.clone());
    let plan = cfg.validate().unwrap();
    let s = solve_stage(&plan.domain, &plan.shape, &plan.recipe, &plan.f, 0.0, &cfg.solve).unwrap();
    let meta = InstanceMeta { n: 1, resolution: 33, shape: plan.shape.clone(), f_expr: "1".into(), eps: 0.0 };
    let path = dir.join("u.cmag");
    save_instance(&Instance { meta: meta.clone(), u: s.u.clone() }, &path).unwrap();
    let back = load_instance(&path).unwrap();
    assert_eq!(back.meta, meta);
    assert_eq!(back.u.values.len(), s.u.values.len());
    for (a, b) in back.u.values.iter().zip(&s.u.values) {
        assert!(a.to_bits() == b.to_bits());
    }
    std::fs::remove_file(sidecar_path(&path)).unwrap();
    assert!(load_instance(&path).is_err());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn exact_ball_bundle_passes_and_lists_every_file() {
    let dir = scratch("exact");
    let m = run_pipeline(&small(dir.clone())).unwrap();
    assert!(m.verdicts.all_pass, "{:?}", m.verdicts);
    assert_eq!(m.verdicts.solver_exact, Some(true));
    assert_eq!(m.verdicts.contact, Some(true));
    assert!(m.stages.iter().all(|s| s.state == StageState::Ok));
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for f in &m.files {
        assert_eq!(sha256_hex(&std::fs::read(dir.join(&f.path)).unwrap()), f.sha256);
    }
    assert_eq!(read_manifest(&dir).unwrap(), m);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn stage_failure_is_recorded() {
    let dir = scratch("failure");
    let mut cfg = small(dir.clone());
    cfg.chains.base_points = 100_000;
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(stage_of(&err), Some("chains"));
    let m = read_manifest(&dir).unwrap();
    assert_eq!(m.stage("solve").unwrap().state, StageState::Ok);
    assert_eq!(m.stage("chains").unwrap().state, StageState::Failed);
    assert!(m.stage("chains").unwrap().error.is_some());
    assert_eq!(m.stage("w2p").unwrap().state, StageState::Skipped);
    assert!(!m.verdicts.all_pass);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_hash_ignores_output_dir() {
    let a = small(PathBuf::from("a"));
    let b = small(PathBuf::from("b"));
    assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    let mut c = small(PathBuf::from("a"));
    c.seed = 2;
    assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
}
