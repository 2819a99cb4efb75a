//! Bit-flip write noise.
//!
//! Two fliptensors congruent to a tensor's bit view mark which bits flip
//! 0→1 (`f_set`) and 1→0 (`f_clear`). They are applied with
//!
//! ```text
//! y = (x | f_set) ^ (x & f_clear)
//! ```
//!
//! which sets a bit only if it was 0 and `f_set` marks it, clears it only if
//! it was 1 and `f_clear` marks it, and leaves it alone otherwise.
//!
//! Sampling is exact Bernoulli per maskable bit. Large probabilities use a
//! word-parallel comparison of uniform bits against the binary expansion of
//! `p`; small ones skip between flips with geometric gaps, so the cost is
//! proportional to the number of flips rather than the number of bits.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, RngStream};
use crate::tensor::{with_storage, BitWords, Element, ElementType, Tensor};

/// Probabilities below this use geometric skipping instead of dense words.
const SPARSE_BELOW: f64 = 1.0 / 32.0;

/// Thermometer mask: bits at big-endian positions `start_bit..bit_width` are noisy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitMask {
    pub dtype: ElementType,
    pub start_bit: u32,
    pub word: u64,
}

impl BitMask {
    /// Number of noisy bits per element.
    pub fn noisy_bits(&self) -> u32 {
        self.word.count_ones()
    }

    /// Noisy bits that fall in the exponent field (all noisy bits for integers).
    pub fn noisy_exponent_bits(&self) -> u32 {
        if !self.dtype.is_float() {
            return self.noisy_bits();
        }
        let exp_field = ((1u64 << self.dtype.exponent_bits()) - 1) << self.dtype.mantissa_bits();
        (self.word & exp_field).count_ones()
    }
}

pub fn make_startbit_mask(dtype: ElementType, start_bit: u32) -> Result<BitMask> {
    let width = dtype.bit_width();
    if start_bit > width {
        return Err(Error::InvalidArgument(format!(
            "start bit {start_bit} outside 0..={width} for {dtype}"
        )));
    }
    let noisy = width - start_bit;
    let word = match noisy {
        0 => 0,
        64 => u64::MAX,
        n => (1u64 << n) - 1,
    };
    Ok(BitMask {
        dtype,
        start_bit,
        word,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Activations,
    Weights,
    Biases,
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "activations" | "activation" | "a" => Ok(Target::Activations),
            "weights" | "weight" | "w" => Ok(Target::Weights),
            "biases" | "bias" | "b" => Ok(Target::Biases),
            other => Err(Error::InvalidArgument(format!(
                "unknown noise target `{other}`"
            ))),
        }
    }
}

/// Set of tensor roles subject to noise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Targets(BTreeSet<Target>);

impl Targets {
    pub fn new(targets: impl IntoIterator<Item = Target>) -> Targets {
        Targets(targets.into_iter().collect())
    }

    pub fn activations() -> Targets {
        Targets::new([Target::Activations])
    }

    pub fn contains(&self, t: Target) -> bool {
        self.0.contains(&t)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Target> + '_ {
        self.0.iter().copied()
    }
}

impl Default for Targets {
    fn default() -> Self {
        Targets::activations()
    }
}

impl fmt::Display for Targets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .0
            .iter()
            .map(|t| match t {
                Target::Activations => "activations",
                Target::Weights => "weights",
                Target::Biases => "biases",
            })
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for Targets {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let set = s
            .split(['+', ','])
            .filter(|p| !p.trim().is_empty())
            .map(Target::from_str)
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(Targets(set))
    }
}

/// What to flip, where, and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability of a 0→1 flip per maskable bit.
    pub p_set: f64,
    /// Probability of a 1→0 flip per maskable bit.
    pub p_clear: f64,
    /// First noisy bit, big-endian from 0 (the sign bit for floats).
    pub start_bit: u32,
    pub targets: Targets,
    pub seed: u64,
}

impl NoiseSpec {
    /// Equal flip probabilities in both directions, all bits, activations only.
    pub fn symmetric(p: f64) -> NoiseSpec {
        NoiseSpec {
            p_set: p,
            p_clear: p,
            start_bit: 0,
            targets: Targets::activations(),
            seed: 0,
        }
    }

    pub fn with_start_bit(mut self, start_bit: u32) -> NoiseSpec {
        self.start_bit = start_bit;
        self
    }

    pub fn with_targets(mut self, targets: Targets) -> NoiseSpec {
        self.targets = targets;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> NoiseSpec {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_set", self.p_set), ("p_clear", self.p_clear)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidArgument("noise spec has no targets".into()));
        }
        Ok(())
    }

    pub fn mask_for(&self, dtype: ElementType) -> Result<BitMask> {
        make_startbit_mask(dtype, self.start_bit)
    }

    pub fn root_stream(&self) -> RngStream {
        RngStream::new(self.seed)
    }

    /// True when no bit can ever change under this spec.
    pub fn is_silent_for(&self, dtype: ElementType) -> bool {
        (self.p_set == 0.0 && self.p_clear == 0.0) || self.start_bit >= dtype.bit_width()
    }
}

/// Fliptensors for one tensor write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipTensorPair {
    /// 0→1 flips.
    pub f_set: BitWords,
    /// 1→0 flips.
    pub f_clear: BitWords,
}

/// Flip masks for `n` elements, either one word per element or a sorted
/// list of (element, word) for the elements that have any flip.
#[derive(Debug, Clone)]
enum Flips {
    Dense(Vec<u64>),
    Sparse(Vec<(usize, u64)>),
}

impl Flips {
    fn to_bit_words(&self, width: u32, n: usize) -> BitWords {
        let mut words = BitWords::zeros(width, n);
        match self {
            Flips::Dense(v) => {
                for (i, &w) in v.iter().enumerate() {
                    words.set(i, w);
                }
            }
            Flips::Sparse(v) => {
                for &(i, w) in v {
                    words.set(i, w);
                }
            }
        }
        words
    }
}

/// Probability as a 64-bit binary fraction, with exact endpoints.
#[derive(Debug, Clone, Copy)]
enum Threshold {
    Never,
    Always,
    Fraction(u64),
}

impl Threshold {
    fn new(p: f64) -> Threshold {
        if p <= 0.0 {
            Threshold::Never
        } else if p >= 1.0 {
            Threshold::Always
        } else {
            // Exact for p >= 2^-11; below that the sparse path is used.
            Threshold::Fraction((p * 18_446_744_073_709_551_616.0) as u64)
        }
    }
}

/// 64 independent Bernoulli(p) bits.
///
/// Each lane compares a lazily drawn uniform against the binary expansion of
/// `p`, most significant bit first; a lane is decided at the first position
/// where its random bit differs from `p`'s bit.
#[inline]
fn bernoulli_word(threshold: u64, rng: &mut impl RngCore) -> u64 {
    let mut result = 0u64;
    let mut undecided = u64::MAX;
    for i in (0..64).rev() {
        let r = rng.next_u64();
        if (threshold >> i) & 1 == 1 {
            result |= undecided & !r;
            undecided &= r;
        } else {
            undecided &= !r;
        }
        // Undecided lanes equal p so far; if p has no further 1 bits they
        // can only end up >= p.
        if undecided == 0 || threshold & ((1u64 << i) - 1) == 0 {
            break;
        }
    }
    result
}

/// Samples flips over `n` elements whose low `m` bits are maskable.
fn sample_flips(n: usize, m: u32, p: f64, stream: &RngStream) -> Option<Flips> {
    if n == 0 || m == 0 {
        return None;
    }
    let low_mask = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    match Threshold::new(p) {
        Threshold::Never => None,
        Threshold::Always => Some(Flips::Dense(vec![low_mask; n])),
        Threshold::Fraction(_) if p < SPARSE_BELOW => {
            let mut rng = stream.generator();
            let total = n as u64 * m as u64;
            let log_q = (-p).ln_1p();
            let mut out: Vec<(usize, u64)> =
                Vec::with_capacity((total as f64 * p * 1.1) as usize + 16);
            let mut pos: u64 = 0;
            loop {
                let gap = rng::open_unit(&mut rng).ln() / log_q;
                // Saturating float-to-int keeps huge gaps past the end.
                pos = pos.saturating_add(gap as u64);
                if pos >= total {
                    break;
                }
                let elem = (pos / m as u64) as usize;
                let bit = 1u64 << (pos % m as u64) as u32;
                match out.last_mut() {
                    Some((e, w)) if *e == elem => *w |= bit,
                    _ => out.push((elem, bit)),
                }
                pos += 1;
            }
            Some(Flips::Sparse(out))
        }
        Threshold::Fraction(t) => {
            let mut rng = stream.generator();
            let mut words = Vec::with_capacity(n);
            if m == 64 {
                words.extend((0..n).map(|_| bernoulli_word(t, &mut rng)));
            } else {
                // Bit reservoir: low `avail` bits of `buf` are unused Bernoulli draws.
                let mut buf = 0u64;
                let mut avail = 0u32;
                for _ in 0..n {
                    let w = if avail >= m {
                        let w = buf & low_mask;
                        buf = if m < 64 { buf >> m } else { 0 };
                        avail -= m;
                        w
                    } else {
                        let fresh = bernoulli_word(t, &mut rng);
                        let need = m - avail;
                        let w = (buf | (fresh << avail)) & low_mask;
                        buf = fresh >> need;
                        avail = 64 - need;
                        w
                    };
                    words.push(w);
                }
            }
            Some(Flips::Dense(words))
        }
    }
}

/// The two fliptensors of one write. With equal rates a single draw serves
/// both: any bit is either 0 or 1, so only one of the two can act on it and
/// sharing the draw leaves the distribution of the output unchanged.
enum Pair {
    Shared(Option<Flips>),
    Separate(Option<Flips>, Option<Flips>),
}

impl Pair {
    fn refs(&self) -> (Option<&Flips>, Option<&Flips>) {
        match self {
            Pair::Shared(f) => (f.as_ref(), f.as_ref()),
            Pair::Separate(s, c) => (s.as_ref(), c.as_ref()),
        }
    }
}

fn sample_pair(n: usize, dtype: ElementType, spec: &NoiseSpec, stream: &RngStream) -> Result<Pair> {
    spec.validate()?;
    let mask = spec.mask_for(dtype)?;
    let m = mask.noisy_bits();
    let f_set = sample_flips(n, m, spec.p_set, &stream.derive(rng::role::FLIP_SET));
    if spec.p_set == spec.p_clear {
        return Ok(Pair::Shared(f_set));
    }
    let f_clear = sample_flips(n, m, spec.p_clear, &stream.derive(rng::role::FLIP_CLEAR));
    Ok(Pair::Separate(f_set, f_clear))
}

/// Draws the fliptensors for a tensor of `n` elements of `dtype`.
///
/// Each maskable bit of `f_set` (resp. `f_clear`) is independently 1 with
/// probability `p_set` (resp. `p_clear`); bits outside the mask are 0.
pub fn sample_fliptensors(
    n: usize,
    dtype: ElementType,
    spec: &NoiseSpec,
    stream: &RngStream,
) -> Result<FlipTensorPair> {
    let pair = sample_pair(n, dtype, spec, stream)?;
    let (f_set, f_clear) = pair.refs();
    let width = dtype.bit_width();
    let dense = |f: Option<&Flips>| match f {
        Some(f) => f.to_bit_words(width, n),
        None => BitWords::zeros(width, n),
    };
    Ok(FlipTensorPair {
        f_set: dense(f_set),
        f_clear: dense(f_clear),
    })
}

/// The noise operator on a single word.
#[inline(always)]
pub fn flip_word(x: u64, f_set: u64, f_clear: u64) -> u64 {
    (x | f_set) ^ (x & f_clear)
}

pub fn apply_bitflip_noise(x: &Tensor, flips: &FlipTensorPair) -> Result<Tensor> {
    let width = x.dtype().bit_width();
    for f in [&flips.f_set, &flips.f_clear] {
        if f.width() != width || f.len() != x.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.len(), width as usize],
                actual: vec![f.len(), f.width() as usize],
            });
        }
    }
    let mut y = x.clone();
    fn apply<T: Element>(v: &mut [T], flips: &FlipTensorPair) {
        for (i, e) in v.iter_mut().enumerate() {
            *e = T::from_word(flip_word(
                e.to_word(),
                flips.f_set.get(i),
                flips.f_clear.get(i),
            ));
        }
    }
    with_storage!(y.storage_mut(), v => apply(v, flips));
    Ok(y)
}

fn apply_flips<T: Element>(v: &mut [T], f_set: Option<&Flips>, f_clear: Option<&Flips>) {
    #[inline]
    fn update<T: Element>(e: &mut T, s: u64, c: u64) {
        *e = T::from_word(flip_word(e.to_word(), s, c));
    }
    match (f_set, f_clear) {
        (None, None) => {}
        (Some(Flips::Dense(s)), Some(Flips::Dense(c))) => {
            for ((e, &s), &c) in v.iter_mut().zip(s).zip(c) {
                update(e, s, c);
            }
        }
        (Some(Flips::Dense(d)), other) | (other, Some(Flips::Dense(d))) => {
            // One dense side; walk the other one alongside.
            let set_is_dense = matches!(f_set, Some(Flips::Dense(_)));
            let sparse: &[(usize, u64)] = match other {
                Some(Flips::Sparse(s)) => s,
                _ => &[],
            };
            let mut k = 0;
            for (i, (e, &dw)) in v.iter_mut().zip(d).enumerate() {
                let mut sw = 0;
                if k < sparse.len() && sparse[k].0 == i {
                    sw = sparse[k].1;
                    k += 1;
                }
                if set_is_dense {
                    update(e, dw, sw);
                } else {
                    update(e, sw, dw);
                }
            }
        }
        (s, c) => {
            let s: &[(usize, u64)] = match s {
                Some(Flips::Sparse(s)) => s,
                _ => &[],
            };
            let c: &[(usize, u64)] = match c {
                Some(Flips::Sparse(c)) => c,
                _ => &[],
            };
            let (mut i, mut j) = (0, 0);
            while i < s.len() || j < c.len() {
                let ei = s.get(i).map_or(usize::MAX, |x| x.0);
                let ej = c.get(j).map_or(usize::MAX, |x| x.0);
                let e = ei.min(ej);
                let sw = if ei == e {
                    i += 1;
                    s[i - 1].1
                } else {
                    0
                };
                let cw = if ej == e {
                    j += 1;
                    c[j - 1].1
                } else {
                    0
                };
                update(&mut v[e], sw, cw);
            }
        }
    }
}

/// Noises `x` in place: one simulated write.
pub fn inject_in_place(x: &mut Tensor, spec: &NoiseSpec, stream: &RngStream) -> Result<()> {
    if spec.is_silent_for(x.dtype()) {
        return spec
            .validate()
            .and_then(|_| spec.mask_for(x.dtype()).map(|_| ()));
    }
    let pair = sample_pair(x.len(), x.dtype(), spec, stream)?;
    let (f_set, f_clear) = pair.refs();
    with_storage!(x.storage_mut(), v => apply_flips(v, f_set, f_clear));
    Ok(())
}

/// `sample_fliptensors` followed by `apply_bitflip_noise`, without
/// materialising dense fliptensors.
pub fn inject(x: &Tensor, spec: &NoiseSpec, stream: &RngStream) -> Result<Tensor> {
    let mut y = x.clone();
    inject_in_place(&mut y, spec, stream)?;
    Ok(y)
}

/// Number of differing bits between two equally sized word arrays.
pub fn hamming_distance(a: &BitWords, b: &BitWords) -> u64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x ^ y).count_ones() as u64)
        .sum()
}
