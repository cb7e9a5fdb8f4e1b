//! Binary and continuous code representations.
//!
//! A [`BinaryCode`] stores a K-bit code over {-1, +1} packed into 64-bit words:
//! bit `k` lives in word `k / 64` at position `k % 64`, a set bit means +1 and
//! unused high bits of the last word are always zero. With that layout the
//! Hamming distance is a word-wise XOR-popcount and the inner product follows
//! from `<a, b> = K - 2 * dist(a, b)`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Largest supported code length in bits.
pub const MAX_BITS: usize = 4096;

const CODE_MAGIC: &[u8; 4] = b"HNBC";
const CODE_VERSION: u32 = 1;

/// Number of 64-bit words needed for a `k`-bit code.
#[inline]
pub fn words_for(k: usize) -> usize {
    k.div_ceil(64)
}

fn check_len(k: usize) -> Result<()> {
    if k == 0 || k > MAX_BITS {
        return Err(Error::invalid(format!("code length {k} outside 1..={MAX_BITS}")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite entry at position {pos}")));
    }
    Ok(())
}

/// A K-bit hash code in {-1, +1}^K, bit-packed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryCode {
    words: Vec<u64>,
    len: usize,
}

impl BinaryCode {
    /// Builds a code from per-bit booleans (`true` = +1).
    pub fn from_bools(bits: &[bool]) -> Result<Self> {
        check_len(bits.len())?;
        let mut words = vec![0u64; words_for(bits.len())];
        for (k, &b) in bits.iter().enumerate() {
            if b {
                words[k / 64] |= 1 << (k % 64);
            }
        }
        Ok(Self { words, len: bits.len() })
    }

    /// Builds a code from a ±1 vector. Any other value is rejected.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        let bits = signs
            .iter()
            .map(|&s| match s {
                1 => Ok(true),
                -1 => Ok(false),
                other => Err(Error::invalid(format!("code value {other} is not ±1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_bools(&bits)
    }

    /// Builds a code from packed words. Unused high bits must be zero.
    pub fn from_words(words: Vec<u64>, len: usize) -> Result<Self> {
        check_len(len)?;
        if words.len() != words_for(len) {
            return Err(Error::invalid(format!(
                "{} words given for a {len}-bit code",
                words.len()
            )));
        }
        let tail = len % 64;
        if tail != 0 && words[words.len() - 1] >> tail != 0 {
            return Err(Error::invalid("unused high bits are not zero"));
        }
        Ok(Self { words, len })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Code value of bit `k` as ±1.
    #[inline]
    pub fn sign(&self, k: usize) -> i8 {
        if self.words[k / 64] >> (k % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.len).map(|k| self.sign(k)).collect()
    }

    /// Code values as floats, for feeding binary codes into the loss.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len).map(|k| f64::from(self.sign(k))).collect()
    }
}

/// A K-dimensional relaxed code with entries in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousCode {
    values: Vec<f64>,
}

impl ContinuousCode {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        if values.iter().any(|v| v.abs() > 1.0) {
            return Err(Error::invalid("continuous code entry outside [-1, 1]"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

/// Element-wise `tanh(beta * z)`.
pub fn scaled_tanh(z: &[f64], beta: f64) -> Result<ContinuousCode> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    check_finite(z)?;
    Ok(ContinuousCode {
        values: z.iter().map(|&v| (beta * v).tanh()).collect(),
    })
}

/// Sign binarization with `sgn(0) = +1`.
///
/// `-0.0` also maps to +1 since it compares equal to zero.
pub fn binarize(z: &[f64]) -> Result<BinaryCode> {
    check_finite(z)?;
    check_len(z.len())?;
    Ok(binarize_unchecked(z))
}

pub(crate) fn binarize_unchecked(z: &[f64]) -> BinaryCode {
    let mut words = vec![0u64; words_for(z.len())];
    for (k, &v) in z.iter().enumerate() {
        if v >= 0.0 {
            words[k / 64] |= 1 << (k % 64);
        }
    }
    BinaryCode { words, len: z.len() }
}

/// XOR-popcount over packed words of equal length.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn check_pair(a: &BinaryCode, b: &BinaryCode) -> Result<()> {
    if a.len != b.len {
        return Err(Error::invalid(format!("code length mismatch: {} vs {}", a.len, b.len)));
    }
    Ok(())
}

pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    check_pair(a, b)?;
    Ok(hamming_words(&a.words, &b.words))
}

/// `<a, b> = K - 2 * popcount(a XOR b)`.
pub fn inner_product(a: &BinaryCode, b: &BinaryCode) -> Result<i64> {
    check_pair(a, b)?;
    Ok(a.len as i64 - 2 * i64::from(hamming_words(&a.words, &b.words)))
}

/// Writes codes in the `HNBC` format: magic, version u32, count u64, K u32,
/// then `ceil(K/64)` little-endian u64 words per code.
pub fn write_codes<W: Write>(mut out: W, k: usize, codes: &[BinaryCode]) -> Result<()> {
    check_len(k)?;
    if let Some(bad) = codes.iter().position(|c| c.len != k) {
        return Err(Error::invalid(format!("code {bad} does not have {k} bits")));
    }
    out.write_all(CODE_MAGIC)?;
    out.write_all(&CODE_VERSION.to_le_bytes())?;
    out.write_all(&(codes.len() as u64).to_le_bytes())?;
    out.write_all(&(k as u32).to_le_bytes())?;
    for code in codes {
        for w in &code.words {
            out.write_all(&w.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads an `HNBC` file, returning `(K, codes)`.
pub fn read_codes<R: Read>(mut input: R) -> Result<(usize, Vec<BinaryCode>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CODE_MAGIC {
        return Err(Error::format("HNBC", "bad magic"));
    }
    let version = read_u32(&mut input)?;
    if version != CODE_VERSION {
        return Err(Error::format("HNBC", format!("unsupported version {version}")));
    }
    let count = read_u64(&mut input)?;
    let k = read_u32(&mut input)? as usize;
    check_len(k).map_err(|e| Error::format("HNBC", e.to_string()))?;
    let n_words = words_for(k);
    let mut codes = Vec::with_capacity(count.min(1 << 20) as usize);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            input.read_exact(&mut buf)?;
            words.push(u64::from_le_bytes(buf));
        }
        codes.push(BinaryCode::from_words(words, k).map_err(|e| Error::format("HNBC", e.to_string()))?);
    }
    Ok((k, codes))
}

pub(crate) fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_inner(a: &[i8], b: &[i8]) -> i64 {
        a.iter().zip(b).map(|(&x, &y)| i64::from(x) * i64::from(y)).sum()
    }

    #[test]
    fn tanh_at_zero_is_zero() {
        assert_eq!(scaled_tanh(&[0.0], 1.0).unwrap().values(), &[0.0]);
    }

    #[test]
    fn tanh_sign_stable_across_beta() {
        let a = scaled_tanh(&[0.7], 1.0).unwrap();
        let b = scaled_tanh(&[0.7], 2.0).unwrap();
        assert!(a.values()[0] > 0.0 && b.values()[0] > 0.0);
        assert_eq!(binarize(a.values()).unwrap(), binarize(b.values()).unwrap());
    }

    #[test]
    fn tanh_saturates_at_large_beta() {
        // tanh(10) = 1 - 4.122307e-9 (series 1 - 2e^-20 + 2e^-40 ...)
        let g = scaled_tanh(&[0.01], 1000.0).unwrap();
        assert!((1.0 - g.values()[0]).abs() < 1e-8);
        let expected = 1.0 - 2.0 * (-20.0f64).exp() + 2.0 * (-40.0f64).exp();
        assert!((g.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn tanh_rejects_bad_input() {
        assert!(scaled_tanh(&[1.0], 0.0).is_err());
        assert!(scaled_tanh(&[1.0], -1.0).is_err());
        assert!(scaled_tanh(&[f64::NAN], 1.0).is_err());
        assert!(scaled_tanh(&[f64::INFINITY], 1.0).is_err());
    }

    #[test]
    fn binarize_zero_maps_to_plus_one() {
        let h = binarize(&[0.3, -0.2, 0.0]).unwrap();
        assert_eq!(h.to_signs(), vec![1, -1, 1]);
        assert_eq!(binarize(&[-0.0]).unwrap().to_signs(), vec![1]);
    }

    #[test]
    fn binarize_all_negative() {
        let h = binarize(&[-1.0; 70]).unwrap();
        assert!(h.to_signs().iter().all(|&s| s == -1));
        assert!(h.words().iter().all(|&w| w == 0));
    }

    #[test]
    fn binarize_rejects_non_finite() {
        assert!(binarize(&[1.0, f64::NAN]).is_err());
        assert!(binarize(&[]).is_err());
    }

    #[test]
    fn inner_product_extremes() {
        let a = BinaryCode::from_signs(&[1; 16]).unwrap();
        let b = BinaryCode::from_signs(&[-1; 16]).unwrap();
        assert_eq!(inner_product(&a, &a).unwrap(), 16);
        assert_eq!(inner_product(&a, &b).unwrap(), -16);
        let c = BinaryCode::from_signs(&[1, -1, 1, 1]).unwrap();
        let d = BinaryCode::from_signs(&[-1, 1, -1, -1]).unwrap();
        assert_eq!(hamming_distance(&c, &c).unwrap(), 0);
        assert_eq!(hamming_distance(&c, &d).unwrap(), 4);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = BinaryCode::from_signs(&[1; 16]).unwrap();
        let b = BinaryCode::from_signs(&[1; 17]).unwrap();
        assert!(inner_product(&a, &b).is_err());
        assert!(hamming_distance(&a, &b).is_err());
    }

    #[test]
    fn length_bounds() {
        assert!(BinaryCode::from_bools(&[true; MAX_BITS]).is_ok());
        assert!(BinaryCode::from_bools(&[true; MAX_BITS + 1]).is_err());
        assert!(BinaryCode::from_bools(&[]).is_err());
        assert!(BinaryCode::from_signs(&[1, 0]).is_err());
    }

    #[test]
    fn from_words_rejects_dirty_tail() {
        assert!(BinaryCode::from_words(vec![1 << 5], 5).is_err());
        assert!(BinaryCode::from_words(vec![0b11111], 5).is_ok());
        assert!(BinaryCode::from_words(vec![0, 0], 64).is_err());
    }

    #[test]
    fn packing_layout() {
        let mut bits = vec![false; 70];
        bits[0] = true;
        bits[65] = true;
        let h = BinaryCode::from_bools(&bits).unwrap();
        assert_eq!(h.words(), &[1, 2]);
    }

    #[test]
    fn code_file_layout_is_fixed() {
        let c = BinaryCode::from_words(vec![0x0102_0304_0506_0708], 64).unwrap();
        let mut buf = Vec::new();
        write_codes(&mut buf, 64, std::slice::from_ref(&c)).unwrap();
        let mut expected = b"HNBC".to_vec();
        expected.extend([1, 0, 0, 0]);
        expected.extend([1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend([64, 0, 0, 0]);
        expected.extend([8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(buf, expected);
        let (k, codes) = read_codes(&buf[..]).unwrap();
        assert_eq!(k, 64);
        assert_eq!(codes, vec![c]);
    }

    #[test]
    fn code_file_rejects_garbage() {
        assert!(read_codes(&b"XXXX\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_codes(&mut buf, 8, &[BinaryCode::from_signs(&[1; 8]).unwrap()]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_codes(&buf[..]).is_err());
    }

    fn signs(k: usize) -> impl Strategy<Value = Vec<i8>> {
        prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), k)
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(v in (1usize..300).prop_flat_map(signs)) {
            let h = BinaryCode::from_signs(&v).unwrap();
            prop_assert_eq!(h.to_signs(), v);
        }

        #[test]
        fn popcount_matches_naive(
            (a, b) in (1usize..200).prop_flat_map(|k| (signs(k), signs(k)))
        ) {
            let ha = BinaryCode::from_signs(&a).unwrap();
            let hb = BinaryCode::from_signs(&b).unwrap();
            let naive_dist = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            let ip = inner_product(&ha, &hb).unwrap();
            prop_assert_eq!(hamming_distance(&ha, &hb).unwrap(), naive_dist);
            prop_assert_eq!(ip, naive_inner(&a, &b));
            prop_assert_eq!(2 * i64::from(naive_dist), a.len() as i64 - ip);
        }

        #[test]
        fn binarize_ignores_tanh(
            z in prop::collection::vec(
                prop_oneof![-50.0f64..-1e-6, 1e-6f64..50.0], 1..64),
            beta in 1e-3f64..1e3,
        ) {
            let g = scaled_tanh(&z, beta).unwrap();
            prop_assert_eq!(binarize(g.values()).unwrap(), binarize(&z).unwrap());
            prop_assert!(g.values().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
