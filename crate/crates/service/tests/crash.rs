//! A writer process is killed at a random moment while it rewrites a label
//! in a loop; the label on disk must always be one complete version.

use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::Duration;

use arcal_core::{Label, OrientedBox, Point3, PointCloud, Vector3};
use arcal_service::Store;

const CHILD_ENV: &str = "ARCAL_CRASH_WRITER_DIR";

fn version(id: &str, k: u64) -> Label {
    let b = OrientedBox::new(Point3::new(k as f64, 0.5, 0.2), Vector3::new(0.6, 0.4, 0.4), 0.25).unwrap();
    Label::from_box(id, &b)
}

/// Child side: never returns; rewrites the label until killed.
fn writer(dir: &str) -> ! {
    let store = Store::open(dir).unwrap();
    let id = store.list()[0].cloud_id.clone();
    let mut k = 1;
    loop {
        store.put_label(&id, &version(&id, k)).unwrap();
        if k == 1 {
            println!("ready");
        }
        k += 1;
    }
}

#[test]
fn killed_writer_leaves_a_complete_label() {
    if let Ok(dir) = std::env::var(CHILD_ENV) {
        writer(&dir);
    }
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let s = Store::open(dir.path()).unwrap();
        let r = s.put_cloud(&PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap()).unwrap();
        s.put_label(&r.cloud_id, &version(&r.cloud_id, 0)).unwrap();
        r.cloud_id
    };
    let exe = std::env::current_exe().unwrap();
    for round in 0..8u64 {
        let mut child = Command::new(&exe)
            .args(["killed_writer_leaves_a_complete_label", "--exact", "--nocapture", "--test-threads=1"])
            .env(CHILD_ENV, dir.path())
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut out = BufReader::new(child.stdout.take().unwrap());
        let mut line = String::new();
        while !line.contains("ready") {
            line.clear();
            assert!(out.read_line(&mut line).unwrap() > 0, "writer exited early");
        }
        std::thread::sleep(Duration::from_millis(3 + 7 * round));
        child.kill().unwrap();
        child.wait().unwrap();

        let s = Store::open(dir.path()).unwrap();
        let text = s.label_json(&id).unwrap().expect("label survives");
        let label: Label = serde_json::from_str(&text).unwrap_or_else(|e| panic!("round {round}: partial label {text:?}: {e}"));
        let k = label.center[0];
        assert_eq!(label, version(&id, k as u64), "round {round}");
        let leftovers = std::fs::read_dir(dir.path()).unwrap().flatten().filter(|e| e.file_name().to_string_lossy().starts_with(".tmp-")).count();
        assert_eq!(leftovers, 0);
    }
}

#[test]
fn injected_fault_never_exposes_a_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path()).unwrap();
    let id = s.put_cloud(&PointCloud::from_xyz(&[[0.0, 0.0, 0.0]]).unwrap()).unwrap().cloud_id;
    s.put_label(&id, &version(&id, 1)).unwrap();
    let full = serde_json::to_string_pretty(&version(&id, 2)).unwrap().len();
    for cut in [0, 1, full / 2, full - 1] {
        s.inject_write_fault(cut);
        assert!(s.put_label(&id, &version(&id, 2)).is_err());
        let got: Label = serde_json::from_str(&s.label_json(&id).unwrap().unwrap()).unwrap();
        assert_eq!(got, version(&id, 1));
    }
    s.put_label(&id, &version(&id, 2)).unwrap();
    drop(s);
    let s = Store::open(dir.path()).unwrap();
    let got: Label = serde_json::from_str(&s.label_json(&id).unwrap().unwrap()).unwrap();
    assert_eq!(got, version(&id, 2));
}
