use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ipts_core::dataset;
use ipts_core::image::quantize_roundtrip;
use proptest::prelude::*;

fn mnist(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/mnist")
        .join(name)
}

fn gunzip(path: &Path) -> Vec<u8> {
    let mut out = Vec::new();
    GzDecoder::new(std::fs::File::open(path).unwrap())
        .read_to_end(&mut out)
        .unwrap();
    out
}

fn be32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap()) as usize
}

#[test]
fn idx_loader_matches_independent_reader() {
    for (part, expected) in [("train", 8000), ("test", 2000)] {
        let img_path = mnist(&format!("{part}-images-idx3-ubyte.gz"));
        let lbl_path = mnist(&format!("{part}-labels-idx1-ubyte.gz"));
        let raw_img = gunzip(&img_path);
        let raw_lbl = gunzip(&lbl_path);
        assert_eq!(be32(&raw_img, 0), 0x803);
        assert_eq!(be32(&raw_lbl, 0), 0x801);
        let (n, rows, cols) = (be32(&raw_img, 4), be32(&raw_img, 8), be32(&raw_img, 12));
        assert_eq!((n, rows, cols), (expected, 28, 28));
        assert_eq!(be32(&raw_lbl, 4), n);

        let corpus = dataset::load_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(corpus.len(), n);
        assert_eq!(corpus.num_classes(), 10);
        for (i, s) in corpus.samples().iter().enumerate() {
            assert_eq!(s.label, raw_lbl[8 + i] as usize);
            let bytes = &raw_img[16 + i * 784..16 + (i + 1) * 784];
            assert_eq!(s.image.to_bytes(), bytes, "{part} image {i}");
        }
    }
}

#[test]
fn idx_write_read_roundtrip() {
    let corpus = dataset::load_idx(
        &mnist("test-images-idx3-ubyte.gz"),
        &mnist("test-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    let sub = corpus.select("sub", &(0..50).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    dataset::write_idx(&sub, &i, &l).unwrap();
    let back = dataset::load_idx(&i, &l).unwrap();
    assert_eq!(back.samples(), sub.samples());
}

#[test]
fn image_dir_roundtrip() {
    let corpus = dataset::load_idx(
        &mnist("test-images-idx3-ubyte.gz"),
        &mnist("test-labels-idx1-ubyte.gz"),
    )
    .unwrap();
    let sub = corpus.select("sub", &(10..30).collect::<Vec<_>>());
    let dir = tempfile::tempdir().unwrap();
    dataset::write_image_dir(&sub, dir.path()).unwrap();
    let back = dataset::load_image_dir(dir.path()).unwrap();
    assert_eq!(back.len(), sub.len());
    for (a, b) in back.samples().iter().zip(sub.samples()) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.label, b.label);
    }
}

proptest! {
    #[test]
    fn quantization_is_idempotent(px in proptest::collection::vec(0.0f64..=1.0, 16)) {
        let img = ipts_core::Image::new(4, 4, px).unwrap();
        let once = quantize_roundtrip(&img);
        prop_assert_eq!(quantize_roundtrip(&once), once);
    }

    #[test]
    fn pgm_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 12)) {
        let img = ipts_core::Image::from_bytes(4, 3, &bytes).unwrap();
        let back = dataset::decode_pgm(&dataset::encode_pgm(&img)).unwrap();
        prop_assert_eq!(back, img);
    }
}
