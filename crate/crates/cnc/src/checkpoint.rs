//! Versioned binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"CNC1"
//! u8     stage (1 | 2 | 3)
//! u32    extractor input dim
//! u32    extractor layer count, then one u32 out-dim per layer
//! u32    original label count C
//! stage 2/3 only:
//!   u32  cluster count K
//!   C x u32 cluster assignment (original label -> cluster id)
//! stage 3 only:
//!   K x u32 branch hidden dims
//! f64... parameters in declaration order: extractor layers (weights
//!        row-major, then bias), then the head (stage 3: branches in
//!        cluster order, fc1 then fc2)
//! ```
//!
//! Stage 2 checkpoints store the composite clustering from original labels
//! to the head's output space, so evaluation can relabel datasets given in
//! original labels.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::cluster::Clustering;
use crate::error::{Error, Result};
use crate::heads::{BranchHead, ClusteredHead, CncHead, CncModel, FlatHead, Head};
use crate::net::{DenseLayer, FeatureExtractor, Parameterized};

pub fn save_model(model: &CncModel, clustering: Option<&Clustering>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model, clustering)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(CncModel, Option<Clustering>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    from_bytes(&bytes)
}

pub fn to_bytes(model: &CncModel, clustering: Option<&Clustering>) -> Result<Vec<u8>> {
    let stage = model.stage();
    let mut out = Vec::new();
    out.extend_from_slice(b"CNC1");
    out.push(stage);
    out.extend_from_slice(&(model.extractor.input_dim() as u32).to_le_bytes());
    let dims = model.extractor.layer_dims();
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in &dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }

    match (&model.head, clustering) {
        (Head::Flat(h), None) => {
            out.extend_from_slice(&(h.fc.out_dim() as u32).to_le_bytes());
        }
        (Head::Flat(_), Some(_)) => {
            return Err(Error::Config("stage-1 checkpoints carry no clustering".into()));
        }
        (Head::Clustered(h), Some(c)) => {
            if c.num_clusters() != h.fc.out_dim() {
                return Err(Error::Config(format!(
                    "clustering has {} clusters, head outputs {}",
                    c.num_clusters(),
                    h.fc.out_dim()
                )));
            }
            write_clustering(&mut out, c);
        }
        (Head::Cnc(h), Some(c)) => {
            if c.num_labels() != h.num_labels || c.num_clusters() != h.branches.len() {
                return Err(Error::Config("clustering does not match branch structure".into()));
            }
            write_clustering(&mut out, c);
            for b in &h.branches {
                out.extend_from_slice(&(b.hidden_dim() as u32).to_le_bytes());
            }
        }
        (_, None) => {
            return Err(Error::Config(format!(
                "stage-{stage} checkpoints need their clustering"
            )));
        }
    }

    for p in model.params_vec() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

fn write_clustering(out: &mut Vec<u8>, c: &Clustering) {
    out.extend_from_slice(&(c.num_labels() as u32).to_le_bytes());
    out.extend_from_slice(&(c.num_clusters() as u32).to_le_bytes());
    for &a in c.assign() {
        out.extend_from_slice(&(a as u32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn u8(&mut self) -> Result<u8> {
        let v = *self
            .bytes
            .get(self.offset)
            .ok_or_else(|| Error::parse(format!("byte {}", self.offset), "truncated checkpoint"))?;
        self.offset += 1;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32> {
        let v = self
            .bytes
            .get(self.offset..self.offset + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::parse(format!("byte {}", self.offset), "truncated checkpoint"))?;
        self.offset += 4;
        Ok(v)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.offset + n * 8;
        let slab = self
            .bytes
            .get(self.offset..end)
            .ok_or_else(|| Error::parse(format!("byte {}", self.offset), "truncated parameters"))?;
        let out = slab
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.offset = end;
        Ok(out)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<(CncModel, Option<Clustering>)> {
    if bytes.get(..4) != Some(b"CNC1".as_slice()) {
        return Err(Error::parse("byte 0", "bad magic, expected CNC1"));
    }
    let mut r = Reader { bytes, offset: 4 };
    let stage = r.u8()?;
    let input_dim = r.u32()? as usize;
    let num_layers = r.u32()? as usize;
    let mut dims = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        dims.push(r.u32()? as usize);
    }

    let mut extractor = FeatureExtractor::identity(input_dim);
    if !dims.is_empty() {
        // Build with zeroed layers; real parameters stream in below.
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = input_dim;
        for &d in &dims {
            layers.push(DenseLayer::zeros(prev, d));
            prev = d;
        }
        extractor = FeatureExtractor::from_layers(input_dim, layers)?;
    }
    let feature_dim = extractor.output_dim();

    let (head, clustering) = match stage {
        1 => {
            let c = r.u32()? as usize;
            (
                Head::Flat(FlatHead {
                    fc: DenseLayer::zeros(feature_dim, c),
                }),
                None,
            )
        }
        2 => {
            let clustering = read_clustering(&mut r)?;
            let k = clustering.num_clusters();
            (
                Head::Clustered(ClusteredHead {
                    fc: DenseLayer::zeros(feature_dim, k),
                }),
                Some(clustering),
            )
        }
        3 => {
            let clustering = read_clustering(&mut r)?;
            let k = clustering.num_clusters();
            let mut hidden = Vec::with_capacity(k);
            for _ in 0..k {
                hidden.push(r.u32()? as usize);
            }
            let branches = clustering
                .masks()
                .into_iter()
                .zip(hidden)
                .map(|(mask, h)| BranchHead {
                    cluster: mask.cluster,
                    fc1: DenseLayer::zeros(feature_dim, h),
                    fc2: DenseLayer::zeros(h, clustering.num_labels()),
                    mask,
                })
                .collect();
            (
                Head::Cnc(CncHead {
                    branches,
                    num_labels: clustering.num_labels(),
                }),
                Some(clustering),
            )
        }
        s => {
            return Err(Error::parse("byte 4", format!("unknown stage tag {s}")));
        }
    };

    let mut model = CncModel::new(extractor, head)?;
    let params = r.f64s(model.num_params())?;
    if r.offset != bytes.len() {
        return Err(Error::parse(
            format!("byte {}", r.offset),
            "trailing bytes after parameters",
        ));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("checkpoint contains non-finite parameters".into()));
    }
    model.set_params(&params)?;
    Ok((model, clustering))
}

fn read_clustering(r: &mut Reader) -> Result<Clustering> {
    let c = r.u32()? as usize;
    let k = r.u32()? as usize;
    let mut assign = Vec::with_capacity(c);
    for _ in 0..c {
        assign.push(r.u32()? as usize);
    }
    let clustering = Clustering::from_assignment(&assign)?;
    if clustering.num_clusters() != k || clustering.assign() != assign.as_slice() {
        return Err(Error::parse("clustering block", "non-canonical cluster ids"));
    }
    Ok(clustering)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::build_step3_head;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn extractor(rng: &mut ChaCha8Rng) -> FeatureExtractor {
        FeatureExtractor::new(6, &[8, 4], rng).unwrap()
    }

    #[test]
    fn stage1_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let model = CncModel::new(
            extractor(&mut rng),
            Head::Flat(FlatHead::new(4, 5, &mut rng)),
        )
        .unwrap();
        let bytes = to_bytes(&model, None).unwrap();
        let (back, clustering) = from_bytes(&bytes).unwrap();
        assert!(clustering.is_none());
        assert_eq!(back.stage(), 1);
        assert_eq!(back.params_vec(), model.params_vec());
        assert_eq!(back.extractor.layer_dims(), model.extractor.layer_dims());
    }

    #[test]
    fn stage2_round_trip_keeps_clustering() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1, 2]).unwrap();
        let model = CncModel::new(
            extractor(&mut rng),
            Head::Clustered(ClusteredHead::new(4, 3, &mut rng)),
        )
        .unwrap();
        let bytes = to_bytes(&model, Some(&clustering)).unwrap();
        let (back, parsed) = from_bytes(&bytes).unwrap();
        assert_eq!(parsed.unwrap(), clustering);
        assert_eq!(back.params_vec(), model.params_vec());
        assert_eq!(back.stage(), 2);
    }

    #[test]
    fn stage3_round_trip_rebuilds_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let clustering = Clustering::from_assignment(&[0, 0, 1, 1, 1]).unwrap();
        let head = build_step3_head(&clustering, 4, 4.0, &mut rng).unwrap();
        let model = CncModel::new(extractor(&mut rng), Head::Cnc(head)).unwrap();
        let bytes = to_bytes(&model, Some(&clustering)).unwrap();
        let (back, parsed) = from_bytes(&bytes).unwrap();
        assert_eq!(parsed.unwrap(), clustering);
        assert_eq!(back.params_vec(), model.params_vec());
        let x = crate::matrix::Matrix::from_rows(&[vec![0.1, -0.4, 0.9, 2.0, -1.0, 0.3]]).unwrap();
        assert_eq!(
            back.logits(&x).unwrap().as_slice(),
            model.logits(&x).unwrap().as_slice()
        );
    }

    #[test]
    fn corrupted_magic_and_truncation_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let model = CncModel::new(
            FeatureExtractor::identity(3),
            Head::Flat(FlatHead::new(3, 2, &mut rng)),
        )
        .unwrap();
        let mut bytes = to_bytes(&model, None).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[1] = b'X';
        assert!(from_bytes(&bytes).is_err());
    }

    #[test]
    fn missing_clustering_is_a_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let model = CncModel::new(
            FeatureExtractor::identity(4),
            Head::Clustered(ClusteredHead::new(4, 2, &mut rng)),
        )
        .unwrap();
        assert!(matches!(to_bytes(&model, None), Err(Error::Config(_))));
    }
}
