//! Binary model file: versioned, length-prefixed sections of named entries.
//!
//! See `docs/model-format.md` for the byte layout.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::corpus::TypeVocabulary;
use crate::crf::{CrfModel, CrfTrainConfig, PairwiseMatrix};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureConfig, WordEmbeddings};
use crate::neural::{Activation, ClassifierModel, InputDims, NetworkConfig};
use crate::pipeline::ModelBundle;
use crate::topics::{InferConfig, LdaModel};

pub const MAGIC: [u8; 8] = *b"TABSENSE";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 1;
const KIND_U64: u8 = 2;
const KIND_STRING: u8 = 3;
const KIND_STRINGS: u8 = 4;

/// A typed value stored under a name.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// Row-major `f64` values with their shape; rank 0 holds one scalar.
    Tensor {
        shape: Vec<usize>,
        values: Vec<f64>,
    },
    U64(u64),
    Str(String),
    Strings(Vec<String>),
}

/// Named entries in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub entries: Vec<(String, Value)>,
}

impl Section {
    fn put(&mut self, name: impl Into<String>, value: Value) {
        self.entries.push((name.into(), value));
    }

    fn u64(&mut self, name: &str, v: u64) {
        self.put(name, Value::U64(v));
    }

    fn usize(&mut self, name: &str, v: usize) {
        self.put(name, Value::U64(v as u64));
    }

    fn f64(&mut self, name: &str, v: f64) {
        self.put(
            name,
            Value::Tensor {
                shape: vec![],
                values: vec![v],
            },
        );
    }

    fn tensor(&mut self, name: impl Into<String>, shape: &[usize], values: &[f64]) {
        self.put(
            name,
            Value::Tensor {
                shape: shape.to_vec(),
                values: values.to_vec(),
            },
        );
    }

    fn get(&self, name: &str) -> Result<&Value> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::CorruptModel(format!("missing entry {name:?}")))
    }

    fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    fn get_u64(&self, name: &str) -> Result<u64> {
        match self.get(name)? {
            Value::U64(v) => Ok(*v),
            _ => Err(Error::CorruptModel(format!("{name:?} is not an integer"))),
        }
    }

    fn get_usize(&self, name: &str) -> Result<usize> {
        usize::try_from(self.get_u64(name)?)
            .map_err(|_| Error::CorruptModel(format!("{name:?} overflows")))
    }

    fn get_tensor(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Value::Tensor { shape, values } => Ok((shape, values)),
            _ => Err(Error::CorruptModel(format!("{name:?} is not a tensor"))),
        }
    }

    fn get_f64(&self, name: &str) -> Result<f64> {
        match self.get_tensor(name)? {
            (shape, [v]) if shape.is_empty() => Ok(*v),
            _ => Err(Error::CorruptModel(format!("{name:?} is not a scalar"))),
        }
    }

    fn get_str(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Value::Str(s) => Ok(s),
            _ => Err(Error::CorruptModel(format!("{name:?} is not a string"))),
        }
    }

    fn get_strings(&self, name: &str) -> Result<&[String]> {
        match self.get(name)? {
            Value::Strings(s) => Ok(s),
            _ => Err(Error::CorruptModel(format!(
                "{name:?} is not a string list"
            ))),
        }
    }

    fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let (shape, values) = self.get_tensor(name)?;
        match shape {
            [r, c] => Array2::from_shape_vec((*r, *c), values.to_vec())
                .map_err(|e| Error::CorruptModel(format!("{name:?}: {e}"))),
            _ => Err(Error::CorruptModel(format!("{name:?} is not a matrix"))),
        }
    }
}

/// Ordered named sections, the in-memory form of a model file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<(String, Section)>,
}

impl Container {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    fn required(&self, name: &'static str) -> Result<&Section> {
        self.section(name)
            .ok_or_else(|| Error::CorruptModel(format!("missing section {name:?}")))
    }
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend((n as u64).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_len(out, s.len());
    out.extend(s.as_bytes());
}

fn encode_section(section: &Section) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend((section.entries.len() as u32).to_le_bytes());
    for (name, value) in &section.entries {
        put_str(&mut out, name);
        match value {
            Value::Tensor { shape, values } => {
                out.push(KIND_TENSOR);
                out.extend((shape.len() as u32).to_le_bytes());
                for &d in shape {
                    put_len(&mut out, d);
                }
                for v in values {
                    out.extend(v.to_le_bytes());
                }
            }
            Value::U64(v) => {
                out.push(KIND_U64);
                out.extend(v.to_le_bytes());
            }
            Value::Str(s) => {
                out.push(KIND_STRING);
                put_str(&mut out, s);
            }
            Value::Strings(list) => {
                out.push(KIND_STRINGS);
                put_len(&mut out, list.len());
                for s in list {
                    put_str(&mut out, s);
                }
            }
        }
    }
    out
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        out.extend((self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            put_str(&mut out, name);
            let body = encode_section(section);
            put_len(&mut out, body.len());
            out.extend(body);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::CorruptModel("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let name = r.string()?;
            let len = r.len()?;
            let body = r.take(len)?;
            let mut inner = Reader {
                bytes: body,
                pos: 0,
            };
            let section = inner.section()?;
            if inner.pos != body.len() {
                return Err(Error::CorruptModel(format!(
                    "trailing bytes in section {name:?}"
                )));
            }
            sections.push((name, section));
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptModel(
                "trailing bytes after last section".into(),
            ));
        }
        Ok(Container { sections })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel("unexpected end of data".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptModel("length overflows".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptModel("invalid UTF-8".into()))
    }

    fn section(&mut self) -> Result<Section> {
        let count = self.u32()?;
        let mut section = Section::default();
        for _ in 0..count {
            let name = self.string()?;
            let kind = self.take(1)?[0];
            let value = match kind {
                KIND_TENSOR => {
                    let rank = self.u32()?;
                    let shape = (0..rank).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
                    let n = shape
                        .iter()
                        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                        .ok_or_else(|| Error::CorruptModel("tensor size overflows".into()))?;
                    let raw = self.take(
                        n.checked_mul(8)
                            .ok_or_else(|| Error::CorruptModel("tensor too large".into()))?,
                    )?;
                    let values = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect();
                    Value::Tensor { shape, values }
                }
                KIND_U64 => Value::U64(self.u64()?),
                KIND_STRING => Value::Str(self.string()?),
                KIND_STRINGS => {
                    let n = self.len()?;
                    Value::Strings((0..n).map(|_| self.string()).collect::<Result<_>>()?)
                }
                other => return Err(Error::CorruptModel(format!("unknown entry kind {other}"))),
            };
            section.put(name, value);
        }
        Ok(section)
    }
}

fn features_section(c: &FeatureConfig) -> Section {
    let mut s = Section::default();
    s.put(
        "char_alphabet",
        Value::Str(c.char_alphabet.iter().collect()),
    );
    s.usize("word_dim", c.word_dim);
    s.usize("para_dim", c.para_dim);
    s.u64("hash_seed", c.hash_seed);
    if let Some(e) = &c.embeddings {
        s.put("embedding_tokens", Value::Strings(e.tokens().to_vec()));
        s.tensor(
            "embedding_vectors",
            &[e.tokens().len(), e.dim()],
            e.vectors(),
        );
    }
    s
}

fn read_features(s: &Section) -> Result<FeatureConfig> {
    let embeddings = if s.has("embedding_tokens") {
        let tokens = s.get_strings("embedding_tokens")?.to_vec();
        let (shape, values) = s.get_tensor("embedding_vectors")?;
        let dim = match shape {
            [n, d] if *n == tokens.len() => *d,
            _ => return Err(Error::CorruptModel("embedding shape".into())),
        };
        Some(WordEmbeddings::new(dim, tokens, values.to_vec())?)
    } else {
        None
    };
    let config = FeatureConfig {
        char_alphabet: s.get_str("char_alphabet")?.chars().collect(),
        word_dim: s.get_usize("word_dim")?,
        para_dim: s.get_usize("para_dim")?,
        hash_seed: s.get_u64("hash_seed")?,
        embeddings,
    };
    config.validate()?;
    Ok(config)
}

fn lda_section(lda: &LdaModel, infer: InferConfig, infer_seed: u64) -> Section {
    let mut s = Section::default();
    s.usize("topics", lda.topics());
    s.f64("alpha", lda.alpha());
    s.f64("beta", lda.beta());
    s.usize("iterations", lda.iterations());
    s.u64("seed", lda.seed());
    s.usize("infer_iterations", infer.iterations);
    s.usize("infer_burn_in", infer.burn_in);
    s.u64("infer_seed", infer_seed);
    s.put("vocab", Value::Strings(lda.vocab().to_vec()));
    s.tensor(
        "topic_word",
        &[lda.topics(), lda.vocab().len()],
        lda.topic_word(),
    );
    s
}

fn read_lda(s: &Section) -> Result<LdaModel> {
    let topics = s.get_usize("topics")?;
    let vocab = s.get_strings("vocab")?.to_vec();
    let (shape, values) = s.get_tensor("topic_word")?;
    if shape != [topics, vocab.len()] {
        return Err(Error::CorruptModel("topic_word shape".into()));
    }
    LdaModel::from_parts(
        topics,
        vocab,
        values.to_vec(),
        s.get_f64("alpha")?,
        s.get_f64("beta")?,
        s.get_usize("iterations")?,
        s.get_u64("seed")?,
    )
}

fn classifier_section(m: &ClassifierModel<f64>) -> Section {
    let mut s = Section::default();
    let c = &m.config;
    s.usize("inputs.char", c.inputs.char);
    s.usize("inputs.word", c.inputs.word);
    s.usize("inputs.para", c.inputs.para);
    s.usize("inputs.stat", c.inputs.stat);
    s.usize("inputs.topic", c.inputs.topic.unwrap_or(0));
    s.usize("subnet_hidden", c.subnet_hidden);
    s.usize("subnet_out", c.subnet_out);
    s.usize("primary_hidden", c.primary_hidden);
    s.f64("dropout_rate", c.dropout_rate);
    s.usize("type_count", c.type_count);
    s.u64("seed", c.seed);
    s.put(
        "activation",
        Value::Str(
            match c.activation {
                Activation::Relu => "relu",
                Activation::Identity => "identity",
            }
            .into(),
        ),
    );
    for p in m.parameters().into_iter().chain(m.buffers()) {
        s.tensor(p.name, &p.shape, p.values);
    }
    s
}

fn read_classifier(s: &Section) -> Result<ClassifierModel<f64>> {
    let topic = s.get_usize("inputs.topic")?;
    let config = NetworkConfig {
        inputs: InputDims {
            char: s.get_usize("inputs.char")?,
            word: s.get_usize("inputs.word")?,
            para: s.get_usize("inputs.para")?,
            stat: s.get_usize("inputs.stat")?,
            topic: (topic > 0).then_some(topic),
        },
        subnet_hidden: s.get_usize("subnet_hidden")?,
        subnet_out: s.get_usize("subnet_out")?,
        primary_hidden: s.get_usize("primary_hidden")?,
        dropout_rate: s.get_f64("dropout_rate")?,
        type_count: s.get_usize("type_count")?,
        seed: s.get_u64("seed")?,
        activation: match s.get_str("activation")? {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            other => return Err(Error::CorruptModel(format!("unknown activation {other:?}"))),
        },
    };
    let mut model = ClassifierModel::<f64>::init(config)?;
    let shapes: Vec<(String, Vec<usize>)> = model
        .parameters()
        .into_iter()
        .chain(model.buffers())
        .map(|p| (p.name, p.shape))
        .collect();
    let mut loaded = Vec::with_capacity(shapes.len());
    for (name, shape) in &shapes {
        let (stored, values) = s.get_tensor(name)?;
        if stored != shape.as_slice() {
            return Err(Error::CorruptModel(format!(
                "{name:?} has shape {stored:?}, expected {shape:?}"
            )));
        }
        loaded.push(values);
    }
    let (params, buffers) = loaded.split_at(model.parameters().len());
    for (dst, src) in model.parameters_mut().into_iter().zip(params) {
        dst.values.copy_from_slice(src);
    }
    for ((_, dst), src) in model.buffers_mut().into_iter().zip(buffers) {
        dst.copy_from_slice(src);
    }
    Ok(model)
}

fn crf_section(m: &CrfModel<f64>) -> Section {
    let mut s = Section::default();
    let w = m.pairwise.weights();
    s.tensor(
        "pairwise",
        &[w.nrows(), w.ncols()],
        w.as_slice().expect("standard layout"),
    );
    if let Some(c) = m.train_config {
        s.usize("epochs", c.epochs);
        s.f64("learning_rate", c.learning_rate);
        s.usize("batch_tables", c.batch_tables);
        s.u64("seed", c.seed);
    }
    s
}

fn read_crf(s: &Section) -> Result<CrfModel<f64>> {
    let mut model = CrfModel::new(PairwiseMatrix::new(s.matrix("pairwise")?)?);
    if s.has("epochs") {
        model.train_config = Some(CrfTrainConfig {
            epochs: s.get_usize("epochs")?,
            learning_rate: s.get_f64("learning_rate")?,
            batch_tables: s.get_usize("batch_tables")?,
            seed: s.get_u64("seed")?,
        });
    }
    Ok(model)
}

/// Section layout of a bundle, in file order.
pub fn to_container(bundle: &ModelBundle) -> Container {
    let mut c = Container::default();
    let mut meta = Section::default();
    for (k, v) in &bundle.metadata {
        meta.put(k.clone(), Value::Str(v.clone()));
    }
    c.sections.push(("meta".into(), meta));
    c.sections
        .push(("features".into(), features_section(&bundle.feature_config)));
    let mut vocab = Section::default();
    vocab.put("names", Value::Strings(bundle.vocabulary.names().to_vec()));
    c.sections.push(("vocabulary".into(), vocab));
    match &bundle.lda {
        Some(lda) => c.sections.push((
            "lda".into(),
            lda_section(lda, bundle.infer_config, bundle.infer_seed),
        )),
        None => {
            let mut s = Section::default();
            s.usize("infer_iterations", bundle.infer_config.iterations);
            s.usize("infer_burn_in", bundle.infer_config.burn_in);
            s.u64("infer_seed", bundle.infer_seed);
            c.sections.push(("inference".into(), s));
        }
    }
    c.sections.push((
        "classifier_base".into(),
        classifier_section(&bundle.classifier_base),
    ));
    if let Some(m) = &bundle.classifier_topic {
        c.sections
            .push(("classifier_topic".into(), classifier_section(m)));
    }
    if let Some(m) = &bundle.crf_base {
        c.sections.push(("crf_base".into(), crf_section(m)));
    }
    if let Some(m) = &bundle.crf_topic {
        c.sections.push(("crf_topic".into(), crf_section(m)));
    }
    if let Some(means) = &bundle.type_topic_means {
        let k = means.first().map_or(0, Vec::len);
        let flat: Vec<f64> = means.iter().flatten().copied().collect();
        let mut s = Section::default();
        s.tensor("means", &[means.len(), k], &flat);
        c.sections.push(("type_topic_means".into(), s));
    }
    c
}

const KNOWN_SECTIONS: [&str; 10] = [
    "meta",
    "features",
    "vocabulary",
    "lda",
    "inference",
    "classifier_base",
    "classifier_topic",
    "crf_base",
    "crf_topic",
    "type_topic_means",
];

pub fn from_container(c: &Container) -> Result<ModelBundle> {
    if let Some((name, _)) = c
        .sections
        .iter()
        .find(|(n, _)| !KNOWN_SECTIONS.contains(&n.as_str()))
    {
        return Err(Error::CorruptModel(format!("unknown section {name:?}")));
    }
    let metadata = c
        .required("meta")?
        .entries
        .iter()
        .map(|(k, v)| match v {
            Value::Str(s) => Ok((k.clone(), s.clone())),
            _ => Err(Error::CorruptModel(format!(
                "metadata {k:?} is not a string"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    let vocabulary = TypeVocabulary::new(c.required("vocabulary")?.get_strings("names")?.to_vec())?;
    let (lda, inference) = match c.section("lda") {
        Some(s) => (Some(read_lda(s)?), s),
        None => (None, c.required("inference")?),
    };
    let infer_config = InferConfig {
        iterations: inference.get_usize("infer_iterations")?,
        burn_in: inference.get_usize("infer_burn_in")?,
    };
    let type_topic_means = match c.section("type_topic_means") {
        Some(s) => {
            let m = s.matrix("means")?;
            Some(m.rows().into_iter().map(|r| r.to_vec()).collect())
        }
        None => None,
    };
    let bundle = ModelBundle {
        feature_config: read_features(c.required("features")?)?,
        vocabulary,
        infer_seed: inference.get_u64("infer_seed")?,
        infer_config,
        lda,
        classifier_base: read_classifier(c.required("classifier_base")?)?,
        classifier_topic: c
            .section("classifier_topic")
            .map(read_classifier)
            .transpose()?,
        crf_base: c.section("crf_base").map(read_crf).transpose()?,
        crf_topic: c.section("crf_topic").map(read_crf).transpose()?,
        type_topic_means,
        metadata,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    to_container(bundle).to_bytes()
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    from_container(&Container::from_bytes(bytes)?)
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let mut s = Section::default();
        s.u64("n", 7);
        s.f64("x", -0.25);
        s.tensor("m", &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, f64::MIN_POSITIVE]);
        s.put("name", Value::Str("héllo".into()));
        s.put("list", Value::Strings(vec!["a".into(), String::new()]));
        let c = Container {
            sections: vec![("one".into(), s), ("empty".into(), Section::default())],
        };
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], b"TABSENSE");
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn header_layout_is_exact() {
        let mut s = Section::default();
        s.u64("k", 0x0102);
        let c = Container {
            sections: vec![("ab".into(), s)],
        };
        let bytes = c.to_bytes();
        let mut expected = b"TABSENSE".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(b"ab");
        let body_len = 4 + 8 + 1 + 1 + 8;
        expected.extend((body_len as u64).to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.push(b'k');
        expected.push(KIND_U64);
        expected.extend(0x0102u64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn rejects_bad_version_magic_and_truncation() {
        let bytes = Container::default().to_bytes();
        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&future),
            Err(Error::UnsupportedVersion(2))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Container::from_bytes(&bad),
            Err(Error::CorruptModel(_))
        ));
        assert!(Container::from_bytes(&bytes[..10]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Container::from_bytes(&long).is_err());
    }
}
