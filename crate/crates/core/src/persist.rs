//! Versioned model files.
//!
//! A model file is a JSON document:
//!
//! ```text
//! { "format": "botwin-model", "version": 1, "kind": "forest" | "mlp", ... }
//! ```
//!
//! with the remaining keys holding the model's config and parameters as a
//! nested tree. Floats are written in shortest round-trip form and parsed
//! exactly, so a loaded model predicts bit-identically to the saved one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::ForestModel;
use crate::mlp::MlpModel;

pub const MODEL_FORMAT: &str = "botwin-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Forest(_) => "forest",
            Model::Mlp(_) => "mlp",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Forest(m) => m.n_features,
            Model::Mlp(m) => m.n_inputs,
        }
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            Model::Forest(m) => m.predict_dataset(data),
            Model::Mlp(m) => m.predict_dataset(data),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: Model,
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    model: &'a Model,
}

pub fn write_model<W: Write>(out: W, model: &Model) -> Result<()> {
    let file = ModelFileRef {
        format: MODEL_FORMAT,
        version: MODEL_VERSION,
        model,
    };
    serde_json::to_writer_pretty(out, &file)?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<Model> {
    let value: serde_json::Value = serde_json::from_reader(input)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => return Err(Error::Model(format!("not a model file (format {other:?})"))),
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        other => return Err(Error::Model(format!("unsupported model version {other:?}"))),
    }
    let file: ModelFile = serde_json::from_value(value)?;
    Ok(file.model)
}

pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(&mut out, model)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::seed;
    use crate::forest::{train_forest, ForestConfig};
    use crate::mlp::{train_mlp, MlpConfig};
    use rand::Rng;

    fn noisy(n: usize) -> Dataset {
        let mut rng = seed::rng(3);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y: u8 = rng.gen_range(0..2);
            for d in 0..4 {
                let shift = if d == 0 { f64::from(y) } else { 0.0 };
                values.push(shift + rng.gen_range(-1.0..1.0) / 3.0);
            }
            labels.push(y);
        }
        Dataset::new(4, values, labels).unwrap()
    }

    #[test]
    fn forest_round_trip_predicts_identically() {
        let data = noisy(200);
        let model = Model::Forest(train_forest(&data, &ForestConfig::default()).unwrap());
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let back = read_model(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        let a = model.predict_dataset(&data).unwrap();
        let b = back.predict_dataset(&data).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn mlp_round_trip_predicts_identically() {
        let data = noisy(128);
        let config = MlpConfig {
            hidden_sizes: vec![6, 3],
            epochs: 3,
            ..Default::default()
        };
        let model = Model::Mlp(train_mlp(&data, &config).unwrap().model);
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"kind\": \"mlp\""));
        let back = read_model(buf.as_slice()).unwrap();
        let a = model.predict_dataset(&data).unwrap();
        let b = back.predict_dataset(&data).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_foreign_documents() {
        assert!(matches!(read_model(r#"{"format":"other","version":1}"#.as_bytes()), Err(Error::Model(_))));
        assert!(matches!(
            read_model(r#"{"format":"botwin-model","version":99,"kind":"forest"}"#.as_bytes()),
            Err(Error::Model(_))
        ));
        assert!(read_model("not json".as_bytes()).is_err());
    }
}
