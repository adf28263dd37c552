//! Reference implementations kept apart from the library code they check.

#![allow(dead_code)]

use psvc_core::SelectionKind;

fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

/// S-box from the field inverse and the affine map, no table.
pub fn sbox(x: u8) -> u8 {
    let inv = if x == 0 {
        0
    } else {
        (1..=255u8).find(|&y| gf_mul(x, y) == 1).unwrap()
    };
    let mut out = 0x63u8;
    for i in 0..8 {
        let bit = (inv >> i)
            ^ (inv >> ((i + 4) % 8))
            ^ (inv >> ((i + 5) % 8))
            ^ (inv >> ((i + 6) % 8))
            ^ (inv >> ((i + 7) % 8));
        out ^= (bit & 1) << i;
    }
    out
}

pub fn popcount(mut x: u8) -> u32 {
    let mut n = 0;
    while x != 0 {
        n += (x & 1) as u32;
        x >>= 1;
    }
    n
}

pub fn hypothesis(kind: SelectionKind, pt: u8, guess: u8) -> f64 {
    let x = pt ^ guess;
    (match kind {
        SelectionKind::XorHw => popcount(x),
        SelectionKind::SboxHw => popcount(sbox(x)),
        SelectionKind::Hd => popcount(x ^ sbox(x)),
        SelectionKind::XorValue => x as u32,
    }) as f64
}

/// Two-pass Pearson per (guess, sample), 0 where either side is constant.
pub fn naive_cpa(rows: &[Vec<f32>], pt_bytes: &[u8], kind: SelectionKind) -> Vec<Vec<f64>> {
    let t = rows.len();
    let s = rows[0].len();
    let mut out = vec![vec![0.0; s]; 256];
    for g in 0..256 {
        let h: Vec<f64> = pt_bytes.iter().map(|&p| hypothesis(kind, p, g as u8)).collect();
        let mut mh = 0.0;
        for v in &h {
            mh += v;
        }
        mh /= t as f64;
        for j in 0..s {
            let mut mx = 0.0;
            for r in rows {
                mx += r[j] as f64;
            }
            mx /= t as f64;
            let (mut sxy, mut sxx, mut shh) = (0.0, 0.0, 0.0);
            for i in 0..t {
                let dx = rows[i][j] as f64 - mx;
                let dh = h[i] - mh;
                sxy += dh * dx;
                sxx += dx * dx;
                shh += dh * dh;
            }
            out[g][j] = if sxx == 0.0 || shh == 0.0 {
                0.0
            } else {
                (sxy / (shh * sxx).sqrt()).clamp(-1.0, 1.0)
            };
        }
    }
    out
}
