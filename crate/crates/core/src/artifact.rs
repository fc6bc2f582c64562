//! Binary model artifacts.
//!
//! ```text
//! magic "WSBARTMD" | u32 version | u32 section count
//! section: [u8; 4] tag | u64 byte length | payload
//! ```
//!
//! All integers and floats are little-endian. `HEAD` holds a JSON header
//! (spec, schema, fit choices, priors and scalings); `DRAW` holds the posterior
//! draws and `SIGM` the σ trace, both as raw `f64` values so a round trip is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::longitudinal::Layout;
use crate::regression::{AsyncFit, RegressionSpec};
use crate::sampler::{Draw, FeatureScaling, PosteriorDraws, Priors, ResponseScale, SamplerConfig};
use crate::soft_tree::{Node, SoftTree, SplitRule};

pub const MAGIC: &[u8; 8] = b"WSBARTMD";
pub const FORMAT_VERSION: u32 = 1;

const HEAD: [u8; 4] = *b"HEAD";
const DRAW: [u8; 4] = *b"DRAW";
const SIGM: [u8; 4] = *b"SIGM";

/// Hex SHA-256 of the model's input schema: layout plus feature names.
pub fn schema_hash(layout: Layout, feature_names: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(layout.tag().as_bytes());
    for name in feature_names {
        h.update([0u8]);
        h.update(name.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: RegressionSpec,
    feature_names: Vec<String>,
    schema_hash: String,
    lag: f64,
    bandwidth: Option<f64>,
    inclusion: Option<f64>,
    design_size: usize,
    config: SamplerConfig,
    priors: Priors,
    response: ResponseScale,
    scaling: FeatureScaling,
}

/// A fitted model together with its input schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub fit: AsyncFit,
    pub feature_names: Vec<String>,
}

impl ModelArtifact {
    pub fn new(fit: AsyncFit) -> Self {
        let p = match fit.spec.layout() {
            Layout::Single => fit.model.feature_dim() - 1,
            Layout::Double => fit.model.feature_dim() - 2,
        };
        let feature_names = fit.spec.layout().feature_names(p);
        ModelArtifact { fit, feature_names }
    }

    pub fn layout(&self) -> Layout {
        self.fit.spec.layout()
    }

    /// Number of covariates a query row must supply.
    pub fn covariate_dim(&self) -> usize {
        self.feature_names.len() - self.layout().feature_dim(0)
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(self.layout(), &self.feature_names)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.fit.model;
        let header = Header {
            format_version: FORMAT_VERSION,
            spec: self.fit.spec.clone(),
            feature_names: self.feature_names.clone(),
            schema_hash: self.schema_hash(),
            lag: self.fit.lag,
            bandwidth: self.fit.bandwidth,
            inclusion: self.fit.inclusion,
            design_size: self.fit.design_size,
            config: m.config.clone(),
            priors: m.priors,
            response: m.response,
            scaling: m.scaling.clone(),
        };
        let head = serde_json::to_vec(&header).map_err(|e| Error::invalid(format!("header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for (tag, payload) in [
            (HEAD, head),
            (DRAW, encode_draws(&m.draws)),
            (SIGM, encode_f64s(&m.sigma_trace)),
        ] {
            out.extend_from_slice(&tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if r.take(8)? != MAGIC {
            return Err(Error::SchemaMismatch("not a model artifact".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::SchemaMismatch(format!("unsupported artifact version {version}")));
        }
        let count = r.u32()?;
        let (mut head, mut draws, mut sigma) = (None, None, None);
        for _ in 0..count {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = usize::try_from(r.u64()?).map_err(|_| corrupt("section length"))?;
            let payload = r.take(len)?;
            match tag {
                HEAD => head = Some(payload),
                DRAW => draws = Some(payload),
                SIGM => sigma = Some(payload),
                // Unknown sections are skipped for forward compatibility.
                _ => {}
            }
        }
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let head = head.ok_or_else(|| corrupt("missing HEAD section"))?;
        let header: Header = serde_json::from_slice(head).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.schema_hash != schema_hash(header.spec.layout(), &header.feature_names) {
            return Err(Error::SchemaMismatch(
                "header schema hash does not match its feature names".into(),
            ));
        }
        let dim = header.feature_names.len();
        let draws = decode_draws(draws.ok_or_else(|| corrupt("missing DRAW section"))?, dim)?;
        let sigma_trace = decode_f64s(sigma.ok_or_else(|| corrupt("missing SIGM section"))?)?;
        let model = PosteriorDraws {
            config: header.config,
            priors: header.priors,
            response: header.response,
            scaling: header.scaling,
            draws,
            sigma_trace,
        };
        Ok(ModelArtifact {
            fit: AsyncFit {
                spec: header.spec,
                model,
                lag: header.lag,
                bandwidth: header.bandwidth,
                inclusion: header.inclusion,
                design_size: header.design_size,
                bandwidth_report: None,
                lag_report: None,
            },
            feature_names: header.feature_names,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::SchemaMismatch(format!("corrupt artifact: {msg}"))
}

fn encode_f64s(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    let mut r = Cursor::new(bytes);
    let n = r.len()?;
    let v = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(corrupt("trailing bytes in f64 section"));
    }
    Ok(v)
}

fn encode_draws(draws: &[Draw]) -> Vec<u8> {
    let mut out = Vec::new();
    let put_len = |out: &mut Vec<u8>, n: usize| out.extend_from_slice(&(n as u64).to_le_bytes());
    put_len(&mut out, draws.len());
    for d in draws {
        out.extend_from_slice(&d.sigma.to_le_bytes());
        put_len(&mut out, d.split_probs.len());
        for p in &d.split_probs {
            out.extend_from_slice(&p.to_le_bytes());
        }
        put_len(&mut out, d.trees.len());
        for tree in &d.trees {
            out.extend_from_slice(&tree.softness().to_le_bytes());
            put_len(&mut out, tree.num_nodes());
            for node in tree.nodes() {
                match *node {
                    Node::Leaf { value } => {
                        out.push(0);
                        out.extend_from_slice(&value.to_le_bytes());
                    }
                    Node::Branch { rule, left, right } => {
                        out.push(1);
                        put_len(&mut out, rule.feature);
                        out.extend_from_slice(&rule.cut.to_le_bytes());
                        put_len(&mut out, left);
                        put_len(&mut out, right);
                    }
                }
            }
        }
    }
    out
}

fn decode_draws(bytes: &[u8], dim: usize) -> Result<Vec<Draw>> {
    let mut r = Cursor::new(bytes);
    let count = r.len()?;
    let mut draws = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let sigma = r.f64()?;
        let np = r.len()?;
        let split_probs = (0..np).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let nt = r.len()?;
        let mut trees = Vec::with_capacity(nt.min(1 << 16));
        for _ in 0..nt {
            let softness = r.f64()?;
            let nn = r.len()?;
            let mut nodes = Vec::with_capacity(nn.min(1 << 16));
            for _ in 0..nn {
                nodes.push(match r.take(1)?[0] {
                    0 => Node::Leaf { value: r.f64()? },
                    1 => {
                        let feature = r.len()?;
                        let cut = r.f64()?;
                        let left = r.len()?;
                        let right = r.len()?;
                        Node::Branch {
                            rule: SplitRule { feature, cut },
                            left,
                            right,
                        }
                    }
                    k => return Err(corrupt(format!("node kind {k}"))),
                });
            }
            trees.push(SoftTree::from_nodes(nodes, softness, dim).map_err(corrupt)?);
        }
        draws.push(Draw {
            trees,
            sigma,
            split_probs,
        });
    }
    if !r.is_empty() {
        return Err(corrupt("trailing bytes in draw section"));
    }
    Ok(draws)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::{fit_async, Method, MethodVariant};
    use crate::simulation::{generate_dataset, ResponseFn, SimConfig};

    fn small_fit(layout: Layout) -> (AsyncFit, Vec<(Vec<f64>, f64)>) {
        let sim = generate_dataset(&SimConfig::new(ResponseFn::F1, 10, 2)).unwrap();
        let mut spec = RegressionSpec::new(MethodVariant::new(Method::Wsb, layout));
        spec.sampler.trees = 4;
        spec.sampler.iterations = 30;
        spec.sampler.burn_in = 10;
        (fit_async(&sim.train, &spec).unwrap(), sim.test_queries())
    }

    #[test]
    fn round_trip_is_exact() {
        for layout in [Layout::Single, Layout::Double] {
            let (fit, queries) = small_fit(layout);
            let art = ModelArtifact::new(fit);
            let bytes = art.to_bytes().unwrap();
            let back = ModelArtifact::from_bytes(&bytes).unwrap();
            assert_eq!(back.fit.model, art.fit.model);
            assert_eq!(back.fit.spec, art.fit.spec);
            assert_eq!(back.to_bytes().unwrap(), bytes);
            let a = art.fit.predict_synchronous(&queries).unwrap();
            let b = back.fit.predict_synchronous(&queries).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn header_layout() {
        let (fit, _) = small_fit(Layout::Double);
        let art = ModelArtifact::new(fit);
        assert_eq!(art.feature_names, vec!["x1", "t", "s"]);
        assert_eq!(art.covariate_dim(), 1);
        let bytes = art.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(&bytes[16..20], b"HEAD");
        assert_eq!(art.schema_hash().len(), 64);
    }

    #[test]
    fn rejects_damage() {
        let (fit, _) = small_fit(Layout::Single);
        let bytes = ModelArtifact::new(fit).to_bytes().unwrap();
        assert!(ModelArtifact::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelArtifact::from_bytes(&bad), Err(Error::SchemaMismatch(_))));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(ModelArtifact::from_bytes(&v2).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ModelArtifact::from_bytes(&extra).is_err());
    }

    #[test]
    fn schema_hash_separates_layouts() {
        let names: Vec<String> = vec!["x1".into(), "t".into()];
        assert_ne!(schema_hash(Layout::Single, &names), schema_hash(Layout::Double, &names));
        let joined: Vec<String> = vec!["x1t".into()];
        assert_ne!(
            schema_hash(Layout::Single, &names),
            schema_hash(Layout::Single, &joined)
        );
    }
}
