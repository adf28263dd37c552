//! AES-128 encryption with full access to the intermediate round states.
//!
//! The simulator renders one power segment per intermediate state, and the
//! attack side needs the same round functions to build its selection values,
//! so this module exposes every step instead of hiding it behind a cipher
//! trait. Nothing here is constant-time; leakage is modelled explicitly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of intermediate states recorded by [`encrypt_block`]: the initial
/// AddRoundKey, four per full round for rounds 1..=9, three for round 10.
pub const INTERMEDIATE_COUNT: usize = 1 + 9 * 4 + 3;

#[rustfmt::skip]
const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

const RCON: [u8; 10] = [0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1b, 0x36];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AesError {
    #[error("expected 16 bytes, got {0}")]
    BadLength(usize),
    #[error("invalid hex: {0}")]
    BadHex(String),
}

macro_rules! block_newtype {
    ($(#[$attr:meta])* $name:ident) => {
        $(#[$attr])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
        pub struct $name(pub [u8; 16]);

        impl $name {
            pub const fn new(bytes: [u8; 16]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; 16] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                self.0.iter().map(|b| format!("{b:02x}")).collect()
            }
        }

        impl From<[u8; 16]> for $name {
            fn from(bytes: [u8; 16]) -> Self {
                Self(bytes)
            }
        }

        impl TryFrom<&[u8]> for $name {
            type Error = AesError;

            fn try_from(bytes: &[u8]) -> Result<Self, AesError> {
                <[u8; 16]>::try_from(bytes)
                    .map(Self)
                    .map_err(|_| AesError::BadLength(bytes.len()))
            }
        }

        impl FromStr for $name {
            type Err = AesError;

            fn from_str(s: &str) -> Result<Self, AesError> {
                let s = s.trim();
                let s = s.strip_prefix("0x").unwrap_or(s);
                if !s.is_ascii() || s.len() % 2 != 0 {
                    return Err(AesError::BadHex(s.to_string()));
                }
                let bytes = (0..s.len())
                    .step_by(2)
                    .map(|i| u8::from_str_radix(&s[i..i + 2], 16))
                    .collect::<Result<Vec<u8>, _>>()
                    .map_err(|_| AesError::BadHex(s.to_string()))?;
                Self::try_from(bytes.as_slice())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }
    };
}

block_newtype!(
    /// A 128-bit cipher key.
    AesKey
);
block_newtype!(
    /// A 16-byte AES state: plaintext, ciphertext or any round intermediate.
    AesBlock
);

/// The four AES round functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    SubBytes,
    ShiftRows,
    MixColumns,
    AddRoundKey,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [
        OpKind::SubBytes,
        OpKind::ShiftRows,
        OpKind::MixColumns,
        OpKind::AddRoundKey,
    ];
}

/// One recorded state: which round function produced it, in which round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundState {
    /// 0 for the initial key whitening, 1..=10 otherwise.
    pub round: u8,
    pub op: OpKind,
    pub state: AesBlock,
}

/// Every intermediate state of one encryption, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundTrace {
    states: Vec<RoundState>,
}

impl RoundTrace {
    pub fn states(&self) -> &[RoundState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Output of the last AddRoundKey, i.e. the ciphertext.
    pub fn final_state(&self) -> AesBlock {
        self.states.last().expect("round trace is never empty").state
    }

    /// State after `op` in `round`, if that combination exists.
    pub fn get(&self, round: u8, op: OpKind) -> Option<AesBlock> {
        self.states
            .iter()
            .find(|s| s.round == round && s.op == op)
            .map(|s| s.state)
    }
}

#[inline]
pub fn sbox(b: u8) -> u8 {
    SBOX[b as usize]
}

#[inline]
pub fn hamming_weight(b: u8) -> u32 {
    b.count_ones()
}

#[inline]
pub fn hamming_distance(a: u8, b: u8) -> u32 {
    hamming_weight(a ^ b)
}

#[inline]
fn xtime(b: u8) -> u8 {
    (b << 1) ^ if b & 0x80 != 0 { 0x1b } else { 0 }
}

/// Standard AES-128 key schedule. Round key 0 is the cipher key itself.
pub fn expand_key(key: &AesKey) -> [AesBlock; 11] {
    let mut words = [[0u8; 4]; 44];
    for (i, w) in words.iter_mut().take(4).enumerate() {
        w.copy_from_slice(&key.0[4 * i..4 * i + 4]);
    }
    for i in 4..44 {
        let mut temp = words[i - 1];
        if i % 4 == 0 {
            temp.rotate_left(1);
            for b in temp.iter_mut() {
                *b = sbox(*b);
            }
            temp[0] ^= RCON[i / 4 - 1];
        }
        for j in 0..4 {
            words[i][j] = words[i - 4][j] ^ temp[j];
        }
    }
    let mut round_keys = [AesBlock::default(); 11];
    for (r, rk) in round_keys.iter_mut().enumerate() {
        for c in 0..4 {
            rk.0[4 * c..4 * c + 4].copy_from_slice(&words[4 * r + c]);
        }
    }
    round_keys
}

pub(crate) fn sub_bytes(state: &mut [u8; 16]) {
    for b in state.iter_mut() {
        *b = sbox(*b);
    }
}

// Column-major state: byte index = row + 4 * column.
pub(crate) fn shift_rows(state: &mut [u8; 16]) {
    let s = *state;
    for row in 1..4 {
        for col in 0..4 {
            state[row + 4 * col] = s[row + 4 * ((col + row) % 4)];
        }
    }
}

pub(crate) fn mix_columns(state: &mut [u8; 16]) {
    for col in state.chunks_exact_mut(4) {
        let [a0, a1, a2, a3] = [col[0], col[1], col[2], col[3]];
        let all = a0 ^ a1 ^ a2 ^ a3;
        col[0] ^= all ^ xtime(a0 ^ a1);
        col[1] ^= all ^ xtime(a1 ^ a2);
        col[2] ^= all ^ xtime(a2 ^ a3);
        col[3] ^= all ^ xtime(a3 ^ a0);
    }
}

fn add_round_key(state: &mut [u8; 16], rk: &AesBlock) {
    for (s, k) in state.iter_mut().zip(rk.0.iter()) {
        *s ^= k;
    }
}

/// Encrypts one block and records all 40 intermediate states.
pub fn encrypt_block(key: &AesKey, pt: &AesBlock) -> (AesBlock, RoundTrace) {
    let round_keys = expand_key(key);
    let mut states = Vec::with_capacity(INTERMEDIATE_COUNT);
    let mut s = pt.0;
    let mut record = |round: u8, op: OpKind, s: &[u8; 16]| {
        states.push(RoundState {
            round,
            op,
            state: AesBlock(*s),
        })
    };

    add_round_key(&mut s, &round_keys[0]);
    record(0, OpKind::AddRoundKey, &s);
    for round in 1..=10u8 {
        sub_bytes(&mut s);
        record(round, OpKind::SubBytes, &s);
        shift_rows(&mut s);
        record(round, OpKind::ShiftRows, &s);
        if round < 10 {
            mix_columns(&mut s);
            record(round, OpKind::MixColumns, &s);
        }
        add_round_key(&mut s, &round_keys[round as usize]);
        record(round, OpKind::AddRoundKey, &s);
    }
    (AesBlock(s), RoundTrace { states })
}

/// Ciphertext only, without allocating the round trace.
pub fn encrypt(key: &AesKey, pt: &AesBlock) -> AesBlock {
    let round_keys = expand_key(key);
    let mut s = pt.0;
    add_round_key(&mut s, &round_keys[0]);
    for (round, rk) in round_keys.iter().enumerate().skip(1) {
        sub_bytes(&mut s);
        shift_rows(&mut s);
        if round < 10 {
            mix_columns(&mut s);
        }
        add_round_key(&mut s, rk);
    }
    AesBlock(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inv_sbox_table() -> [u8; 256] {
        let mut inv = [0u8; 256];
        for i in 0..256 {
            inv[sbox(i as u8) as usize] = i as u8;
        }
        inv
    }

    fn gmul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            a = xtime(a);
            b >>= 1;
        }
        p
    }

    fn decrypt(key: &AesKey, ct: &AesBlock) -> AesBlock {
        let inv = inv_sbox_table();
        let rks = expand_key(key);
        let mut s = ct.0;
        for round in (1..=10).rev() {
            add_round_key(&mut s, &rks[round]);
            if round < 10 {
                for col in s.chunks_exact_mut(4) {
                    let a = [col[0], col[1], col[2], col[3]];
                    for r in 0..4 {
                        col[r] = gmul(a[r], 14)
                            ^ gmul(a[(r + 1) % 4], 11)
                            ^ gmul(a[(r + 2) % 4], 13)
                            ^ gmul(a[(r + 3) % 4], 9);
                    }
                }
            }
            let t = s;
            for row in 1..4 {
                for col in 0..4 {
                    s[row + 4 * ((col + row) % 4)] = t[row + 4 * col];
                }
            }
            for b in s.iter_mut() {
                *b = inv[*b as usize];
            }
        }
        add_round_key(&mut s, &rks[0]);
        AesBlock(s)
    }

    fn fips_key() -> AesKey {
        "000102030405060708090a0b0c0d0e0f".parse().unwrap()
    }

    #[test]
    fn sbox_matches_inverse_plus_affine_construction() {
        for x in 0..=255u8 {
            let inv = if x == 0 {
                0
            } else {
                (1..=255u8).find(|&y| gmul(x, y) == 1).unwrap()
            };
            let affine = inv
                ^ inv.rotate_left(1)
                ^ inv.rotate_left(2)
                ^ inv.rotate_left(3)
                ^ inv.rotate_left(4)
                ^ 0x63;
            assert_eq!(sbox(x), affine, "sbox({x:#04x})");
        }
    }

    #[test]
    fn sbox_examples_and_bijection() {
        assert_eq!(sbox(0x00), 0x63);
        assert_eq!(sbox(0x53), 0xed);
        let mut seen = [false; 256];
        for x in 0..=255u8 {
            seen[sbox(x) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn key_expansion_vectors() {
        let zero = expand_key(&AesKey::default());
        assert_eq!(zero[0], AesBlock::default());

        let rks = expand_key(&fips_key());
        assert_eq!(rks[0].0, fips_key().0);
        assert_eq!(&rks[1].0[..4], &[0xd6, 0xaa, 0x74, 0xfd]);
        assert_eq!(rks[10].to_hex(), "13111d7fe3944a17f307a78b4d2b30c5");
        assert_eq!(expand_key(&fips_key()), rks);
    }

    #[test]
    fn fips197_appendix_c1() {
        let pt: AesBlock = "00112233445566778899aabbccddeeff".parse().unwrap();
        let (ct, rounds) = encrypt_block(&fips_key(), &pt);
        assert_eq!(ct.to_hex(), "69c4e0d86a7b0430d8cdb78070b4c55a");
        assert_eq!(rounds.len(), INTERMEDIATE_COUNT);
        assert_eq!(rounds.final_state(), ct);
        // round[1].start from the appendix walk-through
        assert_eq!(
            rounds.get(0, OpKind::AddRoundKey).unwrap().to_hex(),
            "00102030405060708090a0b0c0d0e0f0"
        );
        assert_eq!(
            rounds.get(1, OpKind::SubBytes).unwrap().to_hex(),
            "63cab7040953d051cd60e0e7ba70e18c"
        );
        assert_eq!(
            rounds.get(1, OpKind::MixColumns).unwrap().to_hex(),
            "5f72641557f5bc92f7be3b291db9f91a"
        );
        assert!(rounds.get(10, OpKind::MixColumns).is_none());
    }

    #[test]
    fn round_trace_structure_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let key = AesKey(rng.random());
            let pt = AesBlock(rng.random());
            let (ct, rounds) = encrypt_block(&key, &pt);
            assert_eq!(rounds.final_state(), ct);
            assert_eq!(encrypt(&key, &pt), ct);
            assert_eq!(encrypt_block(&key, &pt).1, rounds);
            let ops: Vec<OpKind> = rounds.states().iter().map(|s| s.op).collect();
            assert_eq!(ops.iter().filter(|&&o| o == OpKind::MixColumns).count(), 9);
            assert_eq!(ops.iter().filter(|&&o| o == OpKind::SubBytes).count(), 10);
        }
    }

    #[test]
    fn decrypt_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let key = AesKey(rng.random());
            let pt = AesBlock(rng.random());
            assert_eq!(decrypt(&key, &encrypt(&key, &pt)), pt);
        }
    }

    #[test]
    fn hamming_exhaustive() {
        assert_eq!(hamming_weight(0x00), 0);
        assert_eq!(hamming_weight(0xff), 8);
        assert_eq!(hamming_weight(0x06), 2);
        assert_eq!(hamming_distance(0x00, 0xff), 8);
        assert_eq!(hamming_distance(0x0f, 0x05), 2);
        for a in 0..=255u8 {
            assert_eq!(hamming_distance(a, a), 0);
            for b in 0..=255u8 {
                let naive = (0..8).filter(|i| (a >> i) & 1 != (b >> i) & 1).count() as u32;
                assert_eq!(hamming_distance(a, b), naive);
                assert_eq!(hamming_distance(a, b), hamming_weight(a ^ b));
            }
        }
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(
            "0x000102030405060708090a0b0c0d0e0f".parse::<AesKey>().unwrap(),
            fips_key()
        );
        assert_eq!("0011".parse::<AesKey>(), Err(AesError::BadLength(2)));
        assert!(matches!("zz".repeat(16).parse::<AesKey>(), Err(AesError::BadHex(_))));
        assert!(AesBlock::try_from(&[0u8; 15][..]).is_err());
    }
}
