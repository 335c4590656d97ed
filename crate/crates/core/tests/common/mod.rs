#![allow(dead_code)]

use lmfnet::io::{decode_lmft, encode_lmft, parse_cifar, parse_pnm, CifarKind};
use lmfnet::{ParseError, Shape, Tensor};

pub enum Input {
    Pnm(Vec<u8>),
    Cifar(Vec<u8>, CifarKind),
    Lmft(Vec<u8>),
}

impl Input {
    pub fn parse(&self) -> Result<(), ParseError> {
        match self {
            Input::Pnm(b) => parse_pnm(b).map(drop),
            Input::Cifar(b, k) => parse_cifar(b, *k).map(drop),
            Input::Lmft(b) => decode_lmft::<f64>(b).map(drop),
        }
    }
}

pub struct Fixture {
    pub name: &'static str,
    pub input: Input,
    pub expect: fn(&ParseError) -> bool,
}

fn pnm(header: &str, payload: &[u8]) -> Vec<u8> {
    let mut b = header.as_bytes().to_vec();
    b.extend_from_slice(payload);
    b
}

fn cifar10_record(label: u8) -> Vec<u8> {
    let mut r = vec![label];
    r.extend((0..3072).map(|i| (i % 251) as u8));
    r
}

fn lmft_valid() -> Vec<u8> {
    encode_lmft(&Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 3), |_, c, y, x| (c * 6 + y * 3 + x) as f64))
}

fn lmft_header(version: u16, dtype: u8, rank: u8, dims: &[u32]) -> Vec<u8> {
    let mut b = b"LMFT".to_vec();
    b.extend_from_slice(&version.to_le_bytes());
    b.push(dtype);
    b.push(rank);
    for d in dims {
        b.extend_from_slice(&d.to_le_bytes());
    }
    b
}

/// Malformed inputs across every parser, each with the diagnostic it must yield.
pub fn malformed_corpus() -> Vec<Fixture> {
    use ParseError as E;
    let mut trailing_lmft = lmft_valid();
    trailing_lmft.push(0);
    let truncated_lmft = lmft_valid()[..lmft_valid().len() - 3].to_vec();
    let mut fine100 = vec![3u8, 100];
    fine100.extend(vec![0u8; 3072]);
    let mut coarse20 = vec![20u8, 5];
    coarse20.extend(vec![0u8; 3072]);
    vec![
        Fixture { name: "pnm empty file", input: Input::Pnm(vec![]), expect: |e| matches!(e, E::BadMagic { .. }) },
        Fixture { name: "pnm ascii P2 magic", input: Input::Pnm(pnm("P2\n1 1\n255\n", b"0")), expect: |e| matches!(e, E::BadMagic { .. }) },
        Fixture { name: "pnm png signature", input: Input::Pnm(b"\x89PNG\r\n\x1a\n".to_vec()), expect: |e| matches!(e, E::BadMagic { .. }) },
        Fixture { name: "pnm magic without separator", input: Input::Pnm(pnm("P5x1 1\n255\n", b"\0")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm header only magic", input: Input::Pnm(pnm("P5", b"")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm missing maxval", input: Input::Pnm(pnm("P5\n4 4\n", b"")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm negative height", input: Input::Pnm(pnm("P5\n4 -4\n255\n", b"")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm zero width", input: Input::Pnm(pnm("P5\n0 4\n255\n", b"")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm maxval zero", input: Input::Pnm(pnm("P5\n1 1\n0\n", b"\0")), expect: |e| matches!(e, E::MaxVal(0)) },
        Fixture { name: "pnm maxval too large", input: Input::Pnm(pnm("P5\n1 1\n70000\n", b"\0\0")), expect: |e| matches!(e, E::MaxVal(70000)) },
        Fixture { name: "pnm maxval glued to payload", input: Input::Pnm(pnm("P5\n1 1\n255x", b"")), expect: |e| matches!(e, E::Header(_)) },
        Fixture { name: "pnm no byte after maxval", input: Input::Pnm(pnm("P5\n1 1\n255", b"")), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "pgm truncated payload", input: Input::Pnm(pnm("P5\n4 4\n255\n", &[7; 15])), expect: |e| matches!(e, E::Truncated { needed: 27, .. }) },
        Fixture { name: "ppm truncated payload", input: Input::Pnm(pnm("P6\n2 2\n255\n", &[7; 11])), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "pgm 16-bit odd payload", input: Input::Pnm(pnm("P5\n2 1\n65535\n", &[1, 2, 3])), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "pgm trailing bytes", input: Input::Pnm(pnm("P5\n1 1\n255\n", &[1, 2])), expect: |e| matches!(e, E::Trailing(1)) },
        Fixture { name: "pgm sample above maxval", input: Input::Pnm(pnm("P5\n2 1\n100\n", &[50, 200])), expect: |e| matches!(e, E::SampleRange { value: 200, maxval: 100 }) },
        Fixture { name: "pgm 16-bit sample above maxval", input: Input::Pnm(pnm("P5\n1 1\n1000\n", &[0xff, 0xff])), expect: |e| matches!(e, E::SampleRange { .. }) },
        Fixture { name: "ppm overflowing dims", input: Input::Pnm(pnm("P6\n100000 100000\n255\n", b"")), expect: |e| matches!(e, E::DimOverflow(_)) },
        Fixture { name: "pgm dim beyond 32 bits", input: Input::Pnm(pnm("P5\n99999999999 1\n255\n", b"")), expect: |e| matches!(e, E::DimOverflow(_)) },
        Fixture { name: "cifar empty file", input: Input::Cifar(vec![], CifarKind::Cifar10), expect: |e| matches!(e, E::RecordLength { .. }) },
        Fixture { name: "cifar10 missing label byte", input: Input::Cifar(vec![0; 3072], CifarKind::Cifar10), expect: |e| matches!(e, E::RecordLength { len: 3072, record: 3073 }) },
        Fixture { name: "cifar10 partial second record", input: Input::Cifar([cifar10_record(1), vec![2; 100]].concat(), CifarKind::Cifar10), expect: |e| matches!(e, E::RecordLength { .. }) },
        Fixture { name: "cifar10 label out of range", input: Input::Cifar([cifar10_record(1), cifar10_record(10)].concat(), CifarKind::Cifar10), expect: |e| matches!(e, E::Label { record: 1, label: 10, .. }) },
        Fixture { name: "cifar100 fine label out of range", input: Input::Cifar(fine100, CifarKind::Cifar100), expect: |e| matches!(e, E::Label { label: 100, .. }) },
        Fixture { name: "cifar100 coarse label out of range", input: Input::Cifar(coarse20, CifarKind::Cifar100), expect: |e| matches!(e, E::Label { label: 20, num_classes: 20, .. }) },
        Fixture { name: "cifar100 read as cifar10 length", input: Input::Cifar(vec![0; 3074], CifarKind::Cifar10), expect: |e| matches!(e, E::RecordLength { .. }) },
        Fixture { name: "lmft empty", input: Input::Lmft(vec![]), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "lmft bad magic", input: Input::Lmft(b"LMFX\x01\x00\x01\x01\x01\x00\x00\x00".to_vec()), expect: |e| matches!(e, E::BadMagic { .. }) },
        Fixture { name: "lmft future version", input: Input::Lmft(lmft_header(2, 1, 1, &[1])), expect: |e| matches!(e, E::Version(2)) },
        Fixture { name: "lmft unknown dtype", input: Input::Lmft(lmft_header(1, 7, 1, &[1])), expect: |e| matches!(e, E::DType(7)) },
        Fixture { name: "lmft rank zero", input: Input::Lmft(lmft_header(1, 1, 0, &[])), expect: |e| matches!(e, E::Rank(0)) },
        Fixture { name: "lmft rank five", input: Input::Lmft(lmft_header(1, 1, 5, &[1; 5])), expect: |e| matches!(e, E::Rank(5)) },
        Fixture { name: "lmft truncated dims", input: Input::Lmft(lmft_header(1, 1, 4, &[1, 2])), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "lmft truncated values", input: Input::Lmft(truncated_lmft), expect: |e| matches!(e, E::Truncated { .. }) },
        Fixture { name: "lmft trailing bytes", input: Input::Lmft(trailing_lmft), expect: |e| matches!(e, E::Trailing(1)) },
        Fixture { name: "lmft overflowing dims", input: Input::Lmft(lmft_header(1, 1, 4, &[u32::MAX; 4])), expect: |e| matches!(e, E::DimOverflow(_)) },
    ]
}
