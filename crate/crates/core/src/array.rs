//! Dense field arrays with validity masks, input generation and raw I/O.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::Value;
use crate::program::{DType, DataSource, InputField, StencilProgram};

#[derive(Clone, Debug, PartialEq)]
pub struct FieldArray {
    pub name: String,
    pub dtype: DType,
    /// Extents in the field's own dimensions.
    pub shape: Vec<usize>,
    pub values: Vec<Value>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("input '{0}' has no data source (pass a seed to generate one)")]
    MissingData(String),
    #[error("input '{0}' was not provided")]
    MissingInput(String),
    #[error(
        "field '{field}': expected shape {expected:?} and dtype {expected_dtype}, found {found:?} and {found_dtype}"
    )]
    Mismatch { field: String, expected: Vec<usize>, expected_dtype: DType, found: Vec<usize>, found_dtype: DType },
    #[error("field '{field}': file {path} holds {found} bytes, expected {expected}")]
    FileSize { field: String, path: PathBuf, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FieldArray {
    pub fn filled(name: &str, dtype: DType, shape: Vec<usize>, value: Value) -> FieldArray {
        let n = shape.iter().product();
        FieldArray { name: name.to_string(), dtype, shape, values: vec![value; n], mask: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Raw little-endian values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.dtype.bytes());
        for v in &self.values {
            v.write_le(&mut out);
        }
        out
    }

    /// One byte per cell, 1 for valid.
    pub fn mask_bytes(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| u8::from(m)).collect()
    }

    pub fn from_bytes(name: &str, dtype: DType, shape: Vec<usize>, bytes: &[u8]) -> Option<FieldArray> {
        let n: usize = shape.iter().product();
        if bytes.len() != n * dtype.bytes() {
            return None;
        }
        let values = bytes.chunks_exact(dtype.bytes()).map(|c| Value::read_le(dtype, c)).collect();
        Some(FieldArray { name: name.to_string(), dtype, shape, values, mask: vec![true; n] })
    }

    /// Writes `<dir>/<name>.bin` and `<dir>/<name>.mask.bin`.
    pub fn write_to(&self, dir: &Path) -> Result<(), DataError> {
        let io = |path: PathBuf| move |source| DataError::Io { path, source };
        let values = dir.join(format!("{}.bin", self.name));
        fs::write(&values, self.to_bytes()).map_err(io(values.clone()))?;
        let mask = dir.join(format!("{}.mask.bin", self.name));
        fs::write(&mask, self.mask_bytes()).map_err(io(mask.clone()))?;
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seeded pseudo-random field. Different fields drawn from the same seed
/// get different streams. Floats are uniform in [-1, 1), integers in
/// [-100, 100].
pub fn random_field(name: &str, dtype: DType, shape: Vec<usize>, seed: u64) -> FieldArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| match dtype {
            DType::Float32 => Value::F32(rng.gen_range(-1.0f32..1.0)),
            DType::Float64 => Value::F64(rng.gen_range(-1.0f64..1.0)),
            DType::Int32 => Value::I32(rng.gen_range(-100..=100)),
            DType::Int64 => Value::I64(rng.gen_range(-100..=100)),
        })
        .collect();
    FieldArray { name: name.to_string(), dtype, shape, values, mask: vec![true; n] }
}

/// Materializes one input from its data source. Relative file paths are
/// resolved against `base_dir`; `seed` fills inputs without a source.
pub fn load_input(
    program: &StencilProgram,
    input: &InputField,
    base_dir: &Path,
    seed: Option<u64>,
) -> Result<FieldArray, DataError> {
    let name = &input.spec.name;
    let dtype = input.spec.dtype;
    let shape = program.field_shape(name).expect("declared input");
    let source = match (&input.data, seed) {
        (Some(s), _) => s.clone(),
        (None, Some(seed)) => DataSource::Random(seed),
        (None, None) => return Err(DataError::MissingData(name.clone())),
    };
    match source {
        DataSource::Random(seed) => Ok(random_field(name, dtype, shape, seed)),
        DataSource::Constant(v) => Ok(FieldArray::filled(name, dtype, shape, Value::from_f64(dtype, v))),
        DataSource::File(path) => {
            let path = base_dir.join(path);
            let bytes = fs::read(&path).map_err(|source| DataError::Io { path: path.clone(), source })?;
            let expected = shape.iter().product::<usize>() * dtype.bytes();
            FieldArray::from_bytes(name, dtype, shape, &bytes).ok_or(DataError::FileSize {
                field: name.clone(),
                path,
                expected,
                found: bytes.len(),
            })
        }
    }
}

/// Loads every declared input in declaration order.
pub fn load_inputs(program: &StencilProgram, base_dir: &Path, seed: Option<u64>) -> Result<Vec<FieldArray>, DataError> {
    program.inputs.iter().map(|i| load_input(program, i, base_dir, seed)).collect()
}

/// Picks the provided array for every declared input, checking shape and
/// dtype.
pub fn match_inputs<'a>(program: &StencilProgram, arrays: &'a [FieldArray]) -> Result<Vec<&'a FieldArray>, DataError> {
    program
        .inputs
        .iter()
        .map(|input| {
            let name = &input.spec.name;
            let a = arrays.iter().find(|a| &a.name == name).ok_or_else(|| DataError::MissingInput(name.clone()))?;
            let expected = program.field_shape(name).expect("declared input");
            if a.shape != expected || a.dtype != input.spec.dtype {
                return Err(DataError::Mismatch {
                    field: name.clone(),
                    expected,
                    expected_dtype: input.spec.dtype,
                    found: a.shape.clone(),
                    found_dtype: a.dtype,
                });
            }
            Ok(a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{parse_program, validate_program};
    use crate::testing::LISTING;

    #[test]
    fn random_is_seeded_and_bounded() {
        let a = random_field("a", DType::Float32, vec![4, 4], 7);
        assert_eq!(a, random_field("a", DType::Float32, vec![4, 4], 7));
        assert_ne!(a.values, random_field("b", DType::Float32, vec![4, 4], 7).values);
        assert!(a.values.iter().all(|v| (-1.0..1.0).contains(&v.to_f64())));
        let i = random_field("i", DType::Int64, vec![100], 1);
        assert!(i.values.iter().all(|v| (-100.0..=100.0).contains(&v.to_f64())));
    }

    #[test]
    fn listing_inputs_use_own_shapes() {
        let p = validate_program(parse_program(LISTING).unwrap()).unwrap();
        let inputs = load_inputs(&p, Path::new("."), Some(3)).unwrap();
        let shapes: Vec<_> = inputs.iter().map(|a| a.shape.clone()).collect();
        assert_eq!(shapes, [vec![32, 32, 32], vec![32, 32, 32], vec![32, 32]]);
        assert!(matches!(load_inputs(&p, Path::new("."), None), Err(DataError::MissingData(_))));
        assert_eq!(match_inputs(&p, &inputs).unwrap().len(), 3);
        assert!(matches!(match_inputs(&p, &inputs[..2]), Err(DataError::MissingInput(n)) if n == "a2"));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("sp-array-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let mut a = random_field("x", DType::Float64, vec![3, 5], 11);
        a.mask[4] = false;
        a.write_to(&dir).unwrap();
        let back =
            FieldArray::from_bytes("x", DType::Float64, vec![3, 5], &fs::read(dir.join("x.bin")).unwrap()).unwrap();
        assert_eq!(back.values, a.values);
        assert_eq!(fs::read(dir.join("x.mask.bin")).unwrap(), a.mask_bytes());
        assert!(FieldArray::from_bytes("x", DType::Float64, vec![3, 4], &a.to_bytes()).is_none());
        fs::remove_dir_all(&dir).unwrap();
    }
}
