//! Dense row-major tensors with a bit-exact word view of every element.
//!
//! Six element types are supported. The 16-bit float formats are stored as
//! their 16-bit patterns; kernels widen them to `f32` and round results back
//! on store, so the stored pattern is always what noise acts on.

use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Float16,
    Bfloat16,
    Float32,
    Float64,
    Int8,
    Uint8,
}

impl ElementType {
    pub const ALL: [ElementType; 6] = [
        ElementType::Float16,
        ElementType::Bfloat16,
        ElementType::Float32,
        ElementType::Float64,
        ElementType::Int8,
        ElementType::Uint8,
    ];

    pub const fn bit_width(self) -> u32 {
        match self {
            ElementType::Float16 | ElementType::Bfloat16 => 16,
            ElementType::Float32 => 32,
            ElementType::Float64 => 64,
            ElementType::Int8 | ElementType::Uint8 => 8,
        }
    }

    pub const fn exponent_bits(self) -> u32 {
        match self {
            ElementType::Float16 => 5,
            ElementType::Bfloat16 | ElementType::Float32 => 8,
            ElementType::Float64 => 11,
            ElementType::Int8 | ElementType::Uint8 => 0,
        }
    }

    pub const fn mantissa_bits(self) -> u32 {
        match self {
            ElementType::Float16 => 10,
            ElementType::Bfloat16 => 7,
            ElementType::Float32 => 23,
            ElementType::Float64 => 52,
            ElementType::Int8 | ElementType::Uint8 => 0,
        }
    }

    pub const fn has_sign(self) -> bool {
        !matches!(self, ElementType::Uint8)
    }

    pub const fn is_float(self) -> bool {
        self.exponent_bits() > 0
    }

    pub const fn name(self) -> &'static str {
        match self {
            ElementType::Float16 => "float16",
            ElementType::Bfloat16 => "bfloat16",
            ElementType::Float32 => "float32",
            ElementType::Float64 => "float64",
            ElementType::Int8 => "int8",
            ElementType::Uint8 => "uint8",
        }
    }

    /// Mask selecting every bit of a word of this type.
    pub const fn word_mask(self) -> u64 {
        match self.bit_width() {
            64 => u64::MAX,
            w => (1u64 << w) - 1,
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ElementType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "float16" | "f16" | "half" => ElementType::Float16,
            "bfloat16" | "bf16" => ElementType::Bfloat16,
            "float32" | "f32" | "float" => ElementType::Float32,
            "float64" | "f64" | "double" => ElementType::Float64,
            "int8" | "i8" => ElementType::Int8,
            "uint8" | "u8" => ElementType::Uint8,
            _ => return Err(Error::UnsupportedDtype(s.to_string())),
        })
    }
}

/// Scalar types that can live in a [`Tensor`].
pub trait Element: Copy + Send + Sync + 'static {
    const DTYPE: ElementType;

    fn to_word(self) -> u64;
    fn from_word(word: u64) -> Self;
    fn to_f64(self) -> f64;
    /// Round-to-nearest-even; floats overflow to infinity, integers saturate.
    fn from_f64(value: f64) -> Self;
}

macro_rules! float_element {
    ($ty:ty, $dtype:expr, $bits:ty) => {
        impl Element for $ty {
            const DTYPE: ElementType = $dtype;

            #[inline]
            fn to_word(self) -> u64 {
                self.to_bits() as u64
            }

            #[inline]
            fn from_word(word: u64) -> Self {
                <$ty>::from_bits(word as $bits)
            }

            #[inline]
            fn to_f64(self) -> f64 {
                f64::from(self)
            }

            #[inline]
            fn from_f64(value: f64) -> Self {
                <$ty>::from_f64(value)
            }
        }
    };
}

float_element!(f16, ElementType::Float16, u16);
float_element!(bf16, ElementType::Bfloat16, u16);

impl Element for f32 {
    const DTYPE: ElementType = ElementType::Float32;

    #[inline]
    fn to_word(self) -> u64 {
        self.to_bits() as u64
    }

    #[inline]
    fn from_word(word: u64) -> Self {
        f32::from_bits(word as u32)
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
}

impl Element for f64 {
    const DTYPE: ElementType = ElementType::Float64;

    #[inline]
    fn to_word(self) -> u64 {
        self.to_bits()
    }

    #[inline]
    fn from_word(word: u64) -> Self {
        f64::from_bits(word)
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
}

impl Element for i8 {
    const DTYPE: ElementType = ElementType::Int8;

    #[inline]
    fn to_word(self) -> u64 {
        self as u8 as u64
    }

    #[inline]
    fn from_word(word: u64) -> Self {
        word as u8 as i8
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        // `as` saturates and maps NaN to zero.
        value.round_ties_even() as i8
    }
}

impl Element for u8 {
    const DTYPE: ElementType = ElementType::Uint8;

    #[inline]
    fn to_word(self) -> u64 {
        self as u64
    }

    #[inline]
    fn from_word(word: u64) -> Self {
        word as u8
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn from_f64(value: f64) -> Self {
        value.round_ties_even() as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Storage {
    Float16(Vec<f16>),
    Bfloat16(Vec<bf16>),
    Float32(Vec<f32>),
    Float64(Vec<f64>),
    Int8(Vec<i8>),
    Uint8(Vec<u8>),
}

/// Runs `$body` with `$v` bound to the typed element vector of a storage.
macro_rules! with_storage {
    ($storage:expr, $v:ident => $body:expr) => {
        match $storage {
            $crate::tensor::Storage::Float16($v) => $body,
            $crate::tensor::Storage::Bfloat16($v) => $body,
            $crate::tensor::Storage::Float32($v) => $body,
            $crate::tensor::Storage::Float64($v) => $body,
            $crate::tensor::Storage::Int8($v) => $body,
            $crate::tensor::Storage::Uint8($v) => $body,
        }
    };
}
pub(crate) use with_storage;

impl Storage {
    pub fn dtype(&self) -> ElementType {
        match self {
            Storage::Float16(_) => ElementType::Float16,
            Storage::Bfloat16(_) => ElementType::Bfloat16,
            Storage::Float32(_) => ElementType::Float32,
            Storage::Float64(_) => ElementType::Float64,
            Storage::Int8(_) => ElementType::Int8,
            Storage::Uint8(_) => ElementType::Uint8,
        }
    }

    pub fn len(&self) -> usize {
        with_storage!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn from_f64_iter(dtype: ElementType, values: impl Iterator<Item = f64>) -> Storage {
        fn collect<T: Element>(values: impl Iterator<Item = f64>) -> Vec<T> {
            values.map(T::from_f64).collect()
        }
        match dtype {
            ElementType::Float16 => Storage::Float16(collect(values)),
            ElementType::Bfloat16 => Storage::Bfloat16(collect(values)),
            ElementType::Float32 => Storage::Float32(collect(values)),
            ElementType::Float64 => Storage::Float64(collect(values)),
            ElementType::Int8 => Storage::Int8(collect(values)),
            ElementType::Uint8 => Storage::Uint8(collect(values)),
        }
    }

    fn from_words(dtype: ElementType, words: impl Iterator<Item = u64>) -> Storage {
        fn collect<T: Element>(words: impl Iterator<Item = u64>) -> Vec<T> {
            words.map(T::from_word).collect()
        }
        match dtype {
            ElementType::Float16 => Storage::Float16(collect(words)),
            ElementType::Bfloat16 => Storage::Bfloat16(collect(words)),
            ElementType::Float32 => Storage::Float32(collect(words)),
            ElementType::Float64 => Storage::Float64(collect(words)),
            ElementType::Int8 => Storage::Int8(collect(words)),
            ElementType::Uint8 => Storage::Uint8(collect(words)),
        }
    }
}

/// Element bit patterns, one unsigned word per element at the element's width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BitWords {
    U8(Vec<u8>),
    U16(Vec<u16>),
    U32(Vec<u32>),
    U64(Vec<u64>),
}

impl BitWords {
    pub fn zeros(width: u32, len: usize) -> BitWords {
        match width {
            8 => BitWords::U8(vec![0; len]),
            16 => BitWords::U16(vec![0; len]),
            32 => BitWords::U32(vec![0; len]),
            64 => BitWords::U64(vec![0; len]),
            _ => panic!("unsupported word width {width}"),
        }
    }

    pub fn from_u64s(width: u32, words: impl IntoIterator<Item = u64>) -> BitWords {
        let words = words.into_iter();
        match width {
            8 => BitWords::U8(words.map(|w| w as u8).collect()),
            16 => BitWords::U16(words.map(|w| w as u16).collect()),
            32 => BitWords::U32(words.map(|w| w as u32).collect()),
            64 => BitWords::U64(words.collect()),
            _ => panic!("unsupported word width {width}"),
        }
    }

    pub fn width(&self) -> u32 {
        match self {
            BitWords::U8(_) => 8,
            BitWords::U16(_) => 16,
            BitWords::U32(_) => 32,
            BitWords::U64(_) => 64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BitWords::U8(w) => w.len(),
            BitWords::U16(w) => w.len(),
            BitWords::U32(w) => w.len(),
            BitWords::U64(w) => w.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> u64 {
        match self {
            BitWords::U8(w) => w[i] as u64,
            BitWords::U16(w) => w[i] as u64,
            BitWords::U32(w) => w[i] as u64,
            BitWords::U64(w) => w[i],
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, word: u64) {
        match self {
            BitWords::U8(w) => w[i] = word as u8,
            BitWords::U16(w) => w[i] = word as u16,
            BitWords::U32(w) => w[i] = word as u32,
            BitWords::U64(w) => w[i] = word,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Total number of set bits over all words.
    pub fn count_ones(&self) -> u64 {
        self.iter().map(|w| w.count_ones() as u64).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, storage: Storage) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != storage.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {shape:?} holds {expected} elements but storage has {}",
                storage.len()
            )));
        }
        Ok(Tensor { shape, storage })
    }

    pub fn from_vec<T: Element>(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor>
    where
        Vec<T>: Into<Storage>,
    {
        Tensor::new(shape, data.into())
    }

    pub fn zeros(shape: Vec<usize>, dtype: ElementType) -> Tensor {
        let n = shape.iter().product();
        let storage = Storage::from_words(dtype, std::iter::repeat_n(0, n));
        Tensor { shape, storage }
    }

    /// Builds a tensor of `dtype` from real values, rounding as [`Tensor::cast`] does.
    pub fn from_f64s(shape: Vec<usize>, dtype: ElementType, values: &[f64]) -> Result<Tensor> {
        Tensor::new(shape, Storage::from_f64_iter(dtype, values.iter().copied()))
    }

    pub fn from_f32s(shape: Vec<usize>, dtype: ElementType, values: &[f32]) -> Result<Tensor> {
        let storage = match dtype {
            ElementType::Float32 => Storage::Float32(values.to_vec()),
            ElementType::Float16 => {
                Storage::Float16(values.iter().map(|&v| f16::from_f32(v)).collect())
            }
            ElementType::Bfloat16 => {
                Storage::Bfloat16(values.iter().map(|&v| bf16::from_f32(v)).collect())
            }
            _ => Storage::from_f64_iter(dtype, values.iter().map(|&v| v as f64)),
        };
        Tensor::new(shape, storage)
    }

    /// Reassembles a tensor from element bit patterns.
    pub fn from_bits(shape: Vec<usize>, dtype: ElementType, words: &BitWords) -> Result<Tensor> {
        if words.width() != dtype.bit_width() {
            return Err(Error::InvalidArgument(format!(
                "{}-bit words cannot hold {dtype} elements",
                words.width()
            )));
        }
        Tensor::new(shape, Storage::from_words(dtype, words.iter()))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> ElementType {
        self.storage.dtype()
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub(crate) fn storage_mut(&mut self) -> &mut Storage {
        &mut self.storage
    }

    pub fn into_storage(self) -> Storage {
        self.storage
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Exact bit pattern of every element, in element order.
    pub fn bit_view(&self) -> BitWords {
        match &self.storage {
            Storage::Float16(v) => BitWords::U16(v.iter().map(|x| x.to_bits()).collect()),
            Storage::Bfloat16(v) => BitWords::U16(v.iter().map(|x| x.to_bits()).collect()),
            Storage::Float32(v) => BitWords::U32(v.iter().map(|x| x.to_bits()).collect()),
            Storage::Float64(v) => BitWords::U64(v.iter().map(|x| x.to_bits()).collect()),
            Storage::Int8(v) => BitWords::U8(v.iter().map(|&x| x as u8).collect()),
            Storage::Uint8(v) => BitWords::U8(v.clone()),
        }
    }

    /// Converts to `target` with round-to-nearest-even.
    ///
    /// Out-of-range values become infinities for float targets and saturate
    /// for integer targets; NaN converts to zero for integer targets.
    pub fn cast(&self, target: ElementType) -> Tensor {
        if target == self.dtype() {
            return self.clone();
        }
        let storage = match (&self.storage, target) {
            // Direct paths keep single rounding for the common float widenings.
            (Storage::Float16(v), ElementType::Float32) => {
                Storage::Float32(v.iter().map(|x| x.to_f32()).collect())
            }
            (Storage::Bfloat16(v), ElementType::Float32) => {
                Storage::Float32(v.iter().map(|x| x.to_f32()).collect())
            }
            (Storage::Float32(v), ElementType::Float16) => {
                Storage::Float16(v.iter().map(|&x| f16::from_f32(x)).collect())
            }
            (Storage::Float32(v), ElementType::Bfloat16) => {
                Storage::Bfloat16(v.iter().map(|&x| bf16::from_f32(x)).collect())
            }
            (s, t) => {
                with_storage!(s, v => Storage::from_f64_iter(t, v.iter().map(|x| x.to_f64())))
            }
        };
        Tensor {
            shape: self.shape.clone(),
            storage,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        with_storage!(&self.storage, v => v.iter().map(|x| x.to_f64()).collect())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.storage {
            Storage::Float32(v) => v.clone(),
            Storage::Float16(v) => v.iter().map(|x| x.to_f32()).collect(),
            Storage::Bfloat16(v) => v.iter().map(|x| x.to_f32()).collect(),
            s => with_storage!(s, v => v.iter().map(|x| x.to_f64() as f32).collect()),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.storage {
            Storage::Float32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.storage {
            Storage::Float64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.storage {
            Storage::Int8(v) => Some(v),
            _ => None,
        }
    }

    /// True when both tensors have the same shape, dtype and element bit patterns.
    pub fn bit_identical(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.dtype() == other.dtype()
            && self.bit_view() == other.bit_view()
    }
}

macro_rules! storage_from_vec {
    ($ty:ty, $variant:ident) => {
        impl From<Vec<$ty>> for Storage {
            fn from(v: Vec<$ty>) -> Storage {
                Storage::$variant(v)
            }
        }
    };
}

storage_from_vec!(f16, Float16);
storage_from_vec!(bf16, Bfloat16);
storage_from_vec!(f32, Float32);
storage_from_vec!(f64, Float64);
storage_from_vec!(i8, Int8);
storage_from_vec!(u8, Uint8);

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(dtype: ElementType, v: f64) -> Tensor {
        Tensor::from_f64s(vec![1], dtype, &[v]).unwrap()
    }

    #[test]
    fn layout_table() {
        for t in ElementType::ALL {
            if t.is_float() {
                assert_eq!(
                    t.bit_width(),
                    1 + t.exponent_bits() + t.mantissa_bits(),
                    "{t}"
                );
            } else {
                assert_eq!(t.bit_width(), 8);
                assert_eq!((t.exponent_bits(), t.mantissa_bits()), (0, 0));
            }
        }
        assert_eq!(
            (
                ElementType::Float16.exponent_bits(),
                ElementType::Float16.mantissa_bits()
            ),
            (5, 10)
        );
        assert_eq!(
            (
                ElementType::Bfloat16.exponent_bits(),
                ElementType::Bfloat16.mantissa_bits()
            ),
            (8, 7)
        );
        assert_eq!(
            (
                ElementType::Float32.exponent_bits(),
                ElementType::Float32.mantissa_bits()
            ),
            (8, 23)
        );
        assert_eq!(
            (
                ElementType::Float64.exponent_bits(),
                ElementType::Float64.mantissa_bits()
            ),
            (11, 52)
        );
    }

    #[test]
    fn bit_view_known_patterns() {
        assert_eq!(
            scalar(ElementType::Float32, 1.0).bit_view(),
            BitWords::U32(vec![0x3F80_0000])
        );
        assert_eq!(
            scalar(ElementType::Float32, -0.0).bit_view(),
            BitWords::U32(vec![0x8000_0000])
        );
        // bfloat16 is the top half of the float32 pattern.
        let top = (1.0f32.to_bits() >> 16) as u16;
        assert_eq!(
            scalar(ElementType::Bfloat16, 1.0).bit_view(),
            BitWords::U16(vec![top])
        );
        assert_eq!(top, 0x3F80);
    }

    #[test]
    fn cast_examples() {
        let one = scalar(ElementType::Float32, 1.0).cast(ElementType::Float16);
        assert_eq!(one.bit_view(), BitWords::U16(vec![0x3C00]));

        let big = scalar(ElementType::Float32, 65536.0).cast(ElementType::Float16);
        assert_eq!(big.to_f64_vec()[0], f64::INFINITY);
        // Largest finite float16 survives.
        let max = scalar(ElementType::Float32, 65504.0).cast(ElementType::Float16);
        assert_eq!(max.to_f64_vec()[0], 65504.0);

        let tenth = Tensor::from_vec(vec![1], vec![0.1f32]).unwrap();
        let back = tenth.cast(ElementType::Bfloat16).cast(ElementType::Float32);
        assert_eq!(back.as_f32().unwrap()[0] as f64, 0.100_097_656_25);
    }

    #[test]
    fn integer_casts_round_even_and_saturate() {
        let t =
            Tensor::from_vec(vec![6], vec![2.5f32, 3.5, -2.5, 300.0, -300.0, f32::NAN]).unwrap();
        assert_eq!(
            t.cast(ElementType::Int8).as_i8().unwrap(),
            &[2, 4, -2, 127, -128, 0]
        );
        let u = t.cast(ElementType::Uint8);
        assert_eq!(u.to_f64_vec(), vec![2.0, 4.0, 0.0, 255.0, 0.0, 0.0]);
    }

    #[test]
    fn special_values_roundtrip_bits() {
        let words = BitWords::U32(vec![
            0x7FC0_1234,
            0xFF80_0000,
            0x7F80_0000,
            0x8000_0000,
            0x0000_0001,
        ]);
        let t = Tensor::from_bits(vec![5], ElementType::Float32, &words).unwrap();
        assert_eq!(t.bit_view(), words);
    }

    #[test]
    fn exhaustive_16_and_8_bit_roundtrip() {
        let all16 = BitWords::U16((0..=u16::MAX).collect());
        for dtype in [ElementType::Float16, ElementType::Bfloat16] {
            let t = Tensor::from_bits(vec![all16.len()], dtype, &all16).unwrap();
            assert_eq!(t.bit_view(), all16, "{dtype}");
        }
        let all8 = BitWords::U8((0..=u8::MAX).collect());
        for dtype in [ElementType::Int8, ElementType::Uint8] {
            let t = Tensor::from_bits(vec![256], dtype, &all8).unwrap();
            assert_eq!(t.bit_view(), all8, "{dtype}");
        }
    }

    #[test]
    fn widening_then_narrowing_is_identity_on_finite_16_bit() {
        let all16 = BitWords::U16((0..=u16::MAX).collect());
        for narrow in [ElementType::Float16, ElementType::Bfloat16] {
            let t = Tensor::from_bits(vec![all16.len()], narrow, &all16).unwrap();
            for wide in [ElementType::Float32, ElementType::Float64] {
                let back = t.cast(wide).cast(narrow);
                let orig = t.to_f64_vec();
                for (i, (a, b)) in t.bit_view().iter().zip(back.bit_view().iter()).enumerate() {
                    if orig[i].is_finite() {
                        assert_eq!(a, b, "{narrow} via {wide} at {a:#06x}");
                    }
                }
            }
        }
    }

    #[test]
    fn word_width_mismatch_rejected() {
        let words = BitWords::U16(vec![0]);
        assert!(Tensor::from_bits(vec![1], ElementType::Float32, &words).is_err());
        assert!("bfloat8".parse::<ElementType>().is_err());
        assert!(matches!(
            "fp8".parse::<ElementType>(),
            Err(Error::UnsupportedDtype(_))
        ));
    }

    #[test]
    fn shape_must_match_storage() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0f32; 3]).is_err());
        let t = Tensor::zeros(vec![2, 3], ElementType::Float16);
        assert_eq!(t.len(), 6);
        assert!(t.clone().reshape(vec![3, 2]).is_ok());
        assert!(t.reshape(vec![4]).is_err());
    }
}
