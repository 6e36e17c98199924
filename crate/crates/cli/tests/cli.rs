use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::process::{Command, Output};

use dpcc::codec::{encode_sequence, random_toy_sequence, Model};
use dpcc::metrics::{points_to_coords, read_ply, voxelize, write_ply, write_ply_coords, PlyFormat};
use dpcc::sparse::Coords;

fn dpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpcc")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dpcc(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_coords(path: &Path) -> Coords {
    points_to_coords(&read_ply(BufReader::new(File::open(path).unwrap())).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn voxelize_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let points: Vec<[f64; 3]> = (0..200)
        .map(|i| {
            let t = i as f64 * 0.1;
            [t.sin() * 3.0, t.cos() * 2.0, t * 0.05 - 1.0]
        })
        .collect();
    let input = dir.path().join("raw.ply");
    write_ply(File::create(&input).unwrap(), &points, PlyFormat::Ascii).unwrap();
    let output = dir.path().join("vox.ply");
    ok(&["voxelize", p(&input), p(&output), "--depth", "7"]);
    assert_eq!(read_coords(&output), voxelize(&points, 7).unwrap());
}

#[test]
fn train_encode_decode_eval() {
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("seq");
    fs::create_dir(&frames_dir).unwrap();
    let frames = random_toy_sequence(4, 4, 6, 1).unwrap();
    for (i, f) in frames.iter().enumerate() {
        let file = File::create(frames_dir.join(format!("f{i}.ply"))).unwrap();
        write_ply_coords(file, f, PlyFormat::BinaryLittleEndian).unwrap();
    }
    let ckpt = dir.path().join("toy.ckpt");
    ok(&[
        "train", "--frames", p(&frames_dir), "--ckpt", p(&ckpt), "--preset", "toy", "--steps", "20", "--blocks", "1",
        "--blocks", "2", "--log-every", "10",
    ]);

    let bits = dir.path().join("lambda8.bin");
    ok(&["encode", "--ckpt", p(&ckpt), "--frames", p(&frames_dir), "--gop", "4", p(&bits)]);
    let dec = dir.path().join("dec");
    ok(&["decode", "--ckpt", p(&ckpt), p(&bits), p(&dec)]);

    // The decoder process reproduces the encoder's reconstructions.
    let model = Model::load(&ckpt).unwrap();
    let expected = encode_sequence(&model, &frames, 4).unwrap();
    for (i, e) in expected.iter().enumerate() {
        assert_eq!(read_coords(&dec.join(format!("{i:05}.ply"))), e.reconstruction, "frame {i}");
    }

    let csv = dir.path().join("rd.csv");
    ok(&["eval", "--ref", p(&frames_dir), "--dec", p(&dec), "--bits", p(&bits), "--csv", p(&csv), "--jobs", "2"]);
    ok(&[
        "eval", "--ref", p(&frames_dir), "--dec", p(&dec), "--bits", p(&bits), "--csv", p(&csv), "--point", "again",
        "--append",
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sequence,point,frame,frame_type,bpp_coords,bpp_feats,bpp_total,d1_psnr");
    assert_eq!(lines.len(), 1 + 2 * frames.len());
    assert!(lines[1].starts_with("seq,lambda8,0,I,"));
    assert!(lines[2].starts_with("seq,lambda8,1,P,"));
    assert!(lines[5].starts_with("seq,again,0,I,"));
}

#[test]
fn decoding_with_another_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let frames_dir = dir.path().join("seq");
    fs::create_dir(&frames_dir).unwrap();
    for (i, f) in random_toy_sequence(9, 2, 6, 1).unwrap().iter().enumerate() {
        write_ply_coords(File::create(frames_dir.join(format!("{i}.ply"))).unwrap(), f, PlyFormat::Ascii).unwrap();
    }
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    for (ckpt, seed) in [(&a, "1"), (&b, "2")] {
        ok(&["train", "--frames", p(&frames_dir), "--ckpt", p(ckpt), "--preset", "toy", "--steps", "1", "--seed", seed]);
    }
    let bits = dir.path().join("s.bin");
    ok(&["encode", "--ckpt", p(&a), "--frames", p(&frames_dir), p(&bits)]);
    let out = dpcc(&["decode", "--ckpt", p(&b), p(&bits), p(&dir.path().join("dec"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn bdrate_reports_per_sequence_and_average() {
    let dir = tempfile::tempdir().unwrap();
    let header = "sequence,point,frame,frame_type,bpp_coords,bpp_feats,bpp_total,d1_psnr\n";
    let anchor_points = [(0.05, 58.0), (0.1, 62.5), (0.2, 66.0), (0.4, 69.0)];
    let mut anchor = String::from(header);
    let mut test = String::from(header);
    for (k, (bpp, psnr)) in anchor_points.iter().enumerate() {
        for frame in 0..2 {
            // Two frames per point whose average is the curve point.
            let jitter = if frame == 0 { 0.01 } else { -0.01 };
            anchor.push_str(&format!("s,l{k},{frame},P,0,0,{},{}\n", bpp + jitter, psnr));
            test.push_str(&format!("s,l{k},{frame},P,0,0,{},{}\n", (bpp + jitter) / 2.0, psnr));
        }
    }
    let (a, t) = (dir.path().join("anchor.csv"), dir.path().join("test.csv"));
    fs::write(&a, anchor).unwrap();
    fs::write(&t, test).unwrap();
    let out = ok(&["bdrate", "--test", p(&t), "--anchor", p(&a)]);
    assert_eq!(out, "s\t-50.00%\naverage\t-50.00%\n");
    assert!(!dpcc(&["bdrate", "--test", p(&t), "--anchor", p(&dir.path().join("missing.csv"))]).status.success());
}
