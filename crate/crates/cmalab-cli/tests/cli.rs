use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmalab"))
}

fn workdir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cmalab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn subcommands_chain_together() {
    let d = workdir("chain");
    let inst = d.join("u.cmag");
    run(&[
        "solve", "--n", "1", "--resolution", "33", "--gamma", "0.05", "--eps", "0.01",
        "--f-expr", "1 + eps*cos(4*theta)*min(r*r, 1)", "--out", s(&inst),
        "--report", s(&d.join("solve.json")),
    ]);
    let rep = json(&d.join("solve.json"));
    assert_eq!(rep["sandwich"]["passes"], true);
    assert_eq!(rep["barrier"]["passes"], true);
    assert!(d.join("u.cmag.json").exists());

    let chains = d.join("chains.json");
    run(&[
        "sections", "--instance", s(&inst), "--center", "0,0", "--center", "0.2,-0.1",
        "--center", "-0.25,0.1", "--levels", "2", "--out-chain", s(&chains),
    ]);
    let c = json(&chains);
    assert_eq!(c["chains"].as_array().unwrap().len(), 3);
    assert_eq!(c["all_fit"], true);
    assert_eq!(c["chains"][0]["record"]["levels"][0]["transform"].as_array().unwrap().len(), 2);

    run(&[
        "engulf", "--instance", s(&inst), "--chains", s(&chains), "--pairs", "20", "--seed", "3",
        "--min-cells", "2", "--report", s(&d.join("engulf.json")),
    ]);
    let e = json(&d.join("engulf.json"));
    assert_eq!(e["rows"].as_array().unwrap().len(), 20);
    assert_eq!(e["pass"], true);

    run(&[
        "cover", "--instance", s(&inst), "--chains", s(&chains), "--families", "4", "--fields", "2",
        "--min-cells", "2", "--report", s(&d.join("cover.json")), "--plot", s(&d.join("weak.csv")),
    ]);
    let cv = json(&d.join("cover.json"));
    assert_eq!(cv["cover_pass"], true);
    assert_eq!(cv["weak_pass"], true);
    let plot = std::fs::read_to_string(d.join("weak.csv")).unwrap();
    assert!(plot.starts_with("t,level_ratio\n"));
    assert_eq!(plot.lines().count(), 10);

    run(&[
        "badset", "--instance", s(&inst), "--eps-bar", "recipe(2)", "--k-max", "3", "--stride", "4",
        "--report", s(&d.join("badset.json")),
    ]);
    let b = json(&d.join("badset.json"));
    assert_eq!(b["report"]["rows"].as_array().unwrap().len(), 3);
    let csv = std::fs::read_to_string(d.join("badset.csv")).unwrap();
    assert!(csv.starts_with("k,radius,bad_nodes,measure"));
    assert_eq!(csv.lines().count(), 4);

    run(&[
        "w2p", "--instance", s(&inst), "--p", "2", "--p", "3", "--badset", s(&d.join("badset.json")),
        "--report", s(&d.join("w2p.json")),
    ]);
    let w = json(&d.join("w2p.json"));
    assert_eq!(w["reports"].as_array().unwrap().len(), 2);
    assert_eq!(w["dominated"], true);
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn cover_accepts_family_and_target_files() {
    let d = workdir("family");
    let inst = d.join("u.cmag");
    run(&["solve", "--resolution", "33", "--out", s(&inst)]);
    let chains = d.join("chains.json");
    run(&["sections", "--instance", s(&inst), "--center", "0,0", "--levels", "1", "--out-chain", s(&chains)]);
    let c = json(&chains);
    let shift = c["chains"][0]["record"]["levels"][0]["shift"].clone();
    let base = c["chains"][0]["record"]["base"].clone();
    let family = serde_json::json!({
        "members": [
            {"base": base, "height": 0.09, "shift": shift},
            {"base": base, "height": 0.04, "shift": shift},
        ],
        "target_center": [0.0, 0.0],
        "target_radius": 0.2,
    });
    std::fs::write(d.join("family.json"), family.to_string()).unwrap();
    std::fs::write(d.join("target.csv"), format!("node\n{base}\n")).unwrap();
    run(&[
        "cover", "--instance", s(&inst), "--family", s(&d.join("family.json")), "--target-set",
        s(&d.join("target.csv")), "--report", s(&d.join("cover.json")),
    ]);
    let cv = json(&d.join("cover.json"));
    assert_eq!(cv["families"][0]["target_nodes"], 1);
    assert_eq!(cv["families"][0]["chosen"], serde_json::json!([0]));
    assert_eq!(cv["cover_pass"], true);
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn pipeline_rejects_invalid_config_without_writing() {
    let d = workdir("invalid");
    let out = d.join("bundle");
    let cfg = d.join("c.toml");
    std::fs::write(&cfg, format!("gamma = 0.6\noutput_dir = {:?}\n", s(&out))).unwrap();
    let o = bin().args(["pipeline", "--config", s(&cfg)]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    assert!(!out.exists());

    std::fs::write(&cfg, "resolutoin = 33\n").unwrap();
    assert!(!bin().args(["pipeline", "--config", s(&cfg)]).output().unwrap().status.success());
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn pipeline_writes_a_bundle() {
    let d = workdir("bundle");
    let out = d.join("bundle");
    let cfg = d.join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "resolution = 33\nmin_cells = 2.0\nstride = 4\noutput_dir = {:?}\n[chains]\nbase_points = 4\nlevels = 2\n[engulf]\npairs = 10\n[cover]\nfamilies = 3\nfields = 2\n",
            s(&out)
        ),
    )
    .unwrap();
    let o = run(&["pipeline", "--config", s(&cfg)]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"all_pass\": true"));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 1);
    assert!(m["files"].as_array().unwrap().len() >= 18);
    let _ = std::fs::remove_dir_all(&d);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let d = workdir("bad");
    let o = bin().args(["solve", "--n", "3", "--out", s(&d.join("x.cmag"))]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    let o = bin().args(["w2p", "--instance", s(&d.join("missing.cmag")), "--report", s(&d.join("r.json"))]).output().unwrap();
    assert!(!o.status.success());
    let _ = std::fs::remove_dir_all(&d);
}
