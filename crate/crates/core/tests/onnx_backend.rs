use std::path::{Path, PathBuf};
use std::process::Command;

use vidsum_core::features::{FeatureBackend, InputLayout, OnnxBackend, OnnxConfig, LATENT_DIM};
use vidsum_core::ingest::Frame;
use vidsum_core::Error;

fn python_with_cv2() -> bool {
    Command::new("python3")
        .args(["-c", "import cv2, numpy"])
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn tiny_model(dir: &Path, channels: usize, layout: &str) -> PathBuf {
    let out = dir.join(format!("tiny_{channels}_{layout}.onnx"));
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/make_tiny_onnx.py");
    let ok = Command::new("python3")
        .arg(script)
        .arg(&out)
        .arg(channels.to_string())
        .arg(layout)
        .status()
        .unwrap()
        .success();
    assert!(ok);
    out
}

fn frames() -> Vec<Frame> {
    vec![
        Frame::solid(0, 64, 48, [10, 200, 30]),
        Frame::solid(1, 299, 299, [250, 5, 90]),
        Frame::solid(2, 64, 48, [10, 200, 30]),
    ]
}

#[test]
fn pooled_output_is_the_conv_grid_average() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    for layout in ["nchw", "nhwc"] {
        let cfg = OnnxConfig::new(tiny_model(dir.path(), LATENT_DIM, layout));
        let backend = OnnxBackend::load(&cfg).unwrap();
        assert_eq!(backend.conv_shape(), (8, 8, LATENT_DIM));
        let (latents, maps) = backend.extract_both(&frames()).unwrap();
        assert_eq!(latents.len(), 3);
        assert_eq!(maps.len(), 3);
        for (v, m) in latents.iter().zip(&maps) {
            assert_eq!(v.values.len(), LATENT_DIM);
            assert_eq!(v.frame_index, m.frame_index);
            for (a, b) in v.values.iter().zip(m.global_average()) {
                assert!((a - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
        // identical frames give identical vectors
        assert_eq!(latents[0].values, latents[2].values);
        assert_ne!(latents[0].values, latents[1].values);
        assert!(backend.extract_latent(&[]).unwrap().is_empty());
        let again = backend.extract_latent(&frames()).unwrap();
        assert_eq!(again, latents);
    }
}

#[test]
fn explicit_layout_and_digest() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = tiny_model(dir.path(), LATENT_DIM, "nhwc");
    let digest = vidsum_core::features::file_sha256(&path).unwrap();
    let mut cfg = OnnxConfig::new(&path);
    cfg.layout = InputLayout::Nhwc;
    cfg.expected_sha256 = Some(digest.to_uppercase());
    let backend = OnnxBackend::load(&cfg).unwrap();
    assert_eq!(backend.sha256(), digest);
    assert_eq!(backend.extract_conv_map(&frames()[..1]).unwrap()[0].shape(), (8, 8, LATENT_DIM));
}

#[test]
fn narrow_pooled_output_is_a_shape_mismatch() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = OnnxConfig::new(tiny_model(dir.path(), 16, "nchw"));
    assert!(matches!(OnnxBackend::load(&cfg), Err(Error::ShapeMismatch(_))));
}

#[test]
fn unknown_output_name_is_a_model_error() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = OnnxConfig::new(tiny_model(dir.path(), LATENT_DIM, "nchw"));
    cfg.conv_output = "mixed_7c".into();
    match OnnxBackend::load(&cfg) {
        Err(Error::ModelLoad(msg)) => assert!(msg.contains("mixed_7c"), "{msg}"),
        Err(e) => panic!("{e}"),
        Ok(_) => panic!("loaded a model without the requested output"),
    }
}

#[test]
fn garbage_file_is_a_model_error() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.onnx");
    std::fs::write(&p, b"not a model").unwrap();
    assert!(matches!(OnnxBackend::load(&OnnxConfig::new(&p)), Err(Error::ModelLoad(_))));
}

#[test]
fn layout_read_from_declared_input_shape() {
    if !python_with_cv2() {
        eprintln!("skipping: python3 with cv2 not available");
        return;
    }
    use vidsum_core::features::detect_layout;
    let dir = tempfile::tempdir().unwrap();
    for (layout, want) in [("nchw", InputLayout::Nchw), ("nhwc", InputLayout::Nhwc)] {
        let bytes = std::fs::read(tiny_model(dir.path(), 4, layout)).unwrap();
        assert_eq!(detect_layout(&bytes).unwrap(), want);
    }
    assert!(matches!(detect_layout(b"\x3a\x05abc"), Err(Error::ModelLoad(_))));
}
