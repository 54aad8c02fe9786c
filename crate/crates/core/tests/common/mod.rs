#![allow(dead_code)]

use std::fs;
use std::path::Path;

use rf_annotate::geometry::{CameraIntrinsics, Grid};
use rf_annotate::io::{pgm, read_sequence, write_sequence};
use rf_annotate::simulator::{generate_scene, simulate, Arrangement, NoiseSpec, Rig, Sequence, TrajectorySpec};
use rf_annotate::{Error, ParseErrorKind};

/// A default-noise 200-frame sequence rendered at a tiny resolution.
pub fn small_sequence(seed: u64) -> Sequence {
    let arrangement = [Arrangement::Free, Arrangement::Touching, Arrangement::Stacked][seed as usize % 3];
    let scene = generate_scene(arrangement, 2 + seed as usize % 3, seed).unwrap();
    let traj = TrajectorySpec {
        seed: seed + 100,
        ..TrajectorySpec::default()
    };
    let noise = NoiseSpec {
        seed: seed + 200,
        ..NoiseSpec::default()
    };
    let rig = Rig {
        intrinsics: CameraIntrinsics::default_vga().scaled(32, 24),
        ..Rig::default()
    };
    simulate(&scene, &traj, &noise, &rig).unwrap()
}

pub fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

fn edit_lines(path: &Path, f: impl FnOnce(&mut Vec<String>)) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    f(&mut lines);
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn edit_json_line(path: &Path, line: usize, f: impl FnOnce(&mut serde_json::Value)) {
    edit_lines(path, |lines| {
        let mut v: serde_json::Value = serde_json::from_str(&lines[line]).unwrap();
        f(&mut v);
        lines[line] = v.to_string();
    });
}

type Mutation = fn(&Path, usize);

/// Corrupted variants of a valid sequence directory and the error class each must raise.
pub const CORPUS: &[(&str, ParseErrorKind, Mutation)] = &[
    ("bad magic", ParseErrorKind::MalformedHeader, |d, _| {
        let p = d.join("frames/000000.depth.pgm");
        let mut b = fs::read(&p).unwrap();
        b[1] = b'2';
        fs::write(p, b).unwrap();
    }),
    ("depth maxval 255", ParseErrorKind::MalformedHeader, |d, _| {
        let p = d.join("frames/000001.depth.pgm");
        let g = pgm::decode_u16(&fs::read(&p).unwrap(), &p).unwrap();
        let narrow = Grid::from_vec(g.width(), g.height(), vec![7u8; g.width() * g.height()]).unwrap();
        fs::write(p, pgm::encode_u8(&narrow)).unwrap();
    }),
    (
        "depth size differs from intrinsics",
        ParseErrorKind::MalformedHeader,
        |d, _| {
            let g = Grid::filled(5, 4, 1000u16);
            fs::write(d.join("frames/000003.depth.pgm"), pgm::encode_u16(&g)).unwrap();
        },
    ),
    ("truncated mask", ParseErrorKind::Truncated, |d, _| {
        let p = d.join("frames/000002.mask.pgm");
        let b = fs::read(&p).unwrap();
        fs::write(p, &b[..b.len() - 10]).unwrap();
    }),
    ("pose index gap", ParseErrorKind::IndexGap, |d, _| {
        edit_lines(&d.join("poses.jsonl"), |l| {
            l.remove(5);
        });
    }),
    ("frame count mismatch", ParseErrorKind::IndexGap, |d, n| {
        let p = d.join("meta.json");
        let mut v: serde_json::Value = serde_json::from_slice(&fs::read(&p).unwrap()).unwrap();
        v["frames"] = (n + 1).into();
        fs::write(p, v.to_string()).unwrap();
    }),
    ("extra frame file", ParseErrorKind::IndexGap, |d, n| {
        let f = d.join("frames");
        fs::copy(f.join("000000.mask.pgm"), f.join(format!("{n:06}.mask.pgm"))).unwrap();
    }),
    ("duplicate tag record", ParseErrorKind::DuplicateRecord, |d, _| {
        edit_lines(&d.join("tags.jsonl"), |l| {
            let first = l[0].clone();
            l.insert(1, first);
        });
    }),
    ("non-unit quaternion", ParseErrorKind::InvalidRecord, |d, _| {
        edit_json_line(&d.join("poses.jsonl"), 3, |v| {
            for q in v["quaternion"].as_array_mut().unwrap() {
                *q = (q.as_f64().unwrap() * 1.01).into();
            }
        });
    }),
    ("unknown epc", ParseErrorKind::InvalidRecord, |d, _| {
        edit_json_line(&d.join("tags.jsonl"), 0, |v| v["epc"] = "NOT-IN-INVENTORY".into());
    }),
    ("phase out of range", ParseErrorKind::InvalidRecord, |d, _| {
        edit_json_line(&d.join("tags.jsonl"), 0, |v| v["phase_deg"] = 200.0.into());
    }),
    ("invalid json", ParseErrorKind::Json, |d, _| {
        let p = d.join("meta.json");
        let b = fs::read(&p).unwrap();
        fs::write(p, &b[..b.len() / 2]).unwrap();
    }),
    ("unknown field", ParseErrorKind::Json, |d, _| {
        edit_json_line(&d.join("poses.jsonl"), 0, |v| v["velocity"] = 1.0.into());
    }),
];

/// Applies every corpus mutation to a copy of `seq` and returns, per case,
/// its name and whether reading failed with the expected error class.
pub fn run_corpus(seq: &Sequence, scratch: &Path) -> Vec<(&'static str, Result<(), String>)> {
    let base = scratch.join("base");
    write_sequence(seq, &base).unwrap();
    read_sequence(&base).expect("unmodified sequence must read back");
    CORPUS
        .iter()
        .enumerate()
        .map(|(i, (name, kind, mutate))| {
            let dir = scratch.join(format!("case{i}"));
            copy_dir(&base, &dir);
            mutate(&dir, seq.len());
            let outcome = match read_sequence(&dir) {
                Ok(_) => Err("accepted".to_owned()),
                Err(Error::Parse(e)) if e.kind == *kind => Ok(()),
                Err(e) => Err(format!("wrong error: {e}")),
            };
            (*name, outcome)
        })
        .collect()
}
