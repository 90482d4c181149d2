#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dualcon::cifar::{PIXELS, RECORD_BYTES, SIDE, TEST_FILE, TRAIN_FILES};

pub const FIXTURE_LABELS: [u8; 3] = [3, 0, 9];

pub fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/three_records.bin")
}

/// Byte of channel `c`, plane position `p` in record `k` of the fixture.
pub fn fixture_byte(k: usize, c: usize, p: usize) -> u8 {
    ((k * 97 + c * 31 + p) % 256) as u8
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One record of the synthetic set: a class-dependent stripe pattern plus
/// hashed noise, so the labels are learnable.
pub fn synthetic_record(index: u64) -> Vec<u8> {
    let label = (splitmix(index) % 10) as usize;
    let mut r = Vec::with_capacity(RECORD_BYTES);
    r.push(label as u8);
    for c in 0..3 {
        for i in 0..SIDE {
            for j in 0..SIDE {
                let stripe = if (i * (label % 5 + 1) + j * (label / 5 + 1) + c) % 8 < 4 {
                    150
                } else {
                    40
                };
                let noise = splitmix(
                    index.wrapping_mul(PIXELS as u64) + (c * SIDE * SIDE + i * SIDE + j) as u64,
                ) % 64;
                r.push((stripe + noise) as u8);
            }
        }
    }
    r
}

/// Writes the six batch files with `per_file` training records each and
/// `test` test records.
pub fn write_synthetic_cifar(dir: &Path, per_file: usize, test: usize) {
    let mut next = 0u64;
    let mut batch = |n: usize| {
        let mut bytes = Vec::with_capacity(n * RECORD_BYTES);
        for _ in 0..n {
            bytes.extend(synthetic_record(next));
            next += 1;
        }
        bytes
    };
    for name in TRAIN_FILES {
        std::fs::write(dir.join(name), batch(per_file)).unwrap();
    }
    std::fs::write(dir.join(TEST_FILE), batch(test)).unwrap();
}
