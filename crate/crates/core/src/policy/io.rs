//! Bundle file layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "PGTB"
//! version    u32      BUNDLE_VERSION
//! latent D   u32
//! n_layers   u32
//! dims       u32 × (n_layers + 1)   net layer widths, input first
//! frozen     u8 × 2                 encoder, net
//! encoder    f64 × (D × 137)         row-major
//! layers     per layer: weight f64 × (out × in) row-major, then bias f64 × out
//! checksum   32 bytes               SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Adapter, AdapterKind, FrozenFlags, PolicyBundle, PromptEncoder, PROMPT_FEATURES};
use crate::error::{Error, Result};
use crate::numeric::{Layer, Mat, Mlp};

pub const BUNDLE_MAGIC: [u8; 4] = *b"PGTB";
pub const BUNDLE_VERSION: u32 = 1;

pub fn bundle_bytes(bundle: &PolicyBundle) -> Vec<u8> {
    let layers = bundle.net.layers();
    let mut out =
        Vec::with_capacity(64 + 8 * (bundle.encoder.embed.len() + bundle.net.num_params()));
    out.extend_from_slice(&BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(bundle.latent_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    out.extend_from_slice(&(bundle.net.input_dim() as u32).to_le_bytes());
    for l in layers {
        out.extend_from_slice(&(l.output_dim() as u32).to_le_bytes());
    }
    out.push(bundle.frozen.encoder as u8);
    out.push(bundle.frozen.net as u8);
    let mut put = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    put(bundle.encoder.embed.as_slice());
    for l in layers {
        put(l.weight.as_slice());
        put(&l.bias);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Checksum("bundle body shorter than its header declares".into())
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Checksum("bundle size overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn bundle_from_bytes(bytes: &[u8]) -> Result<PolicyBundle> {
    if bytes.len() < 4 + 32 || bytes[..4] != BUNDLE_MAGIC {
        return Err(Error::Checksum(
            "not a policy bundle (bad magic or too short)".into(),
        ));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("bundle checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, at: 4 };
    let version = r.u32()? as u32;
    if version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: BUNDLE_VERSION,
        });
    }
    let d = r.u32()?;
    let n_layers = r.u32()?;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checksum(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let dims = (0..=n_layers)
        .map(|_| r.u32())
        .collect::<Result<Vec<_>>>()?;
    let flags = r.take(2)?;
    let frozen = FrozenFlags {
        encoder: flags[0] != 0,
        net: flags[1] != 0,
    };
    let embed = Mat::from_vec(d, PROMPT_FEATURES, r.f64s(d * PROMPT_FEATURES)?)?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in dims.windows(2) {
        let weight = Mat::from_vec(w[1], w[0], r.f64s(w[0] * w[1])?)?;
        let bias = r.f64s(w[1])?;
        layers.push(Layer { weight, bias });
    }
    if r.at != body.len() {
        return Err(Error::Checksum("trailing bytes after bundle body".into()));
    }
    let mut bundle = PolicyBundle::new(PromptEncoder { embed }, Mlp::new(layers)?)?;
    bundle.frozen = frozen;
    Ok(bundle)
}

pub fn save_bundle(bundle: &PolicyBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle_bytes(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<PolicyBundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    bundle_from_bytes(&bytes)
}

/// Load and require latent dimension `d`.
pub fn load_bundle_expecting(path: &Path, d: usize) -> Result<PolicyBundle> {
    let bundle = load_bundle(path)?;
    if bundle.latent_dim() != d {
        return Err(Error::Dimension {
            context: "bundle latent dimension",
            expected: d,
            actual: bundle.latent_dim(),
        });
    }
    Ok(bundle)
}

const ADAPTER_FORMAT: &str = "pgt-adapter v1";

#[derive(serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterFile {
    format: String,
    kind: AdapterKind,
    rank: usize,
    bundle_checksum: String,
    params: Vec<f64>,
}

/// Adapter file: one JSON object naming the bundle it was trained against.
pub fn adapter_to_string(adapter: &Adapter, bundle: &PolicyBundle) -> String {
    let file = AdapterFile {
        format: ADAPTER_FORMAT.into(),
        kind: adapter.kind,
        rank: adapter.rank,
        bundle_checksum: bundle.checksum(),
        params: adapter.params.clone(),
    };
    let mut s = serde_json::to_string(&file).expect("adapter serializes");
    s.push('\n');
    s
}

/// Parse an adapter file and check it belongs to `bundle`.
pub fn parse_adapter(text: &str, bundle: &PolicyBundle) -> Result<Adapter> {
    let file: AdapterFile = serde_json::from_str(text).map_err(|e| Error::Format {
        line: e.line(),
        message: e.to_string(),
    })?;
    if file.format != ADAPTER_FORMAT {
        return Err(Error::Format {
            line: 1,
            message: format!("expected format '{ADAPTER_FORMAT}'"),
        });
    }
    if file.bundle_checksum != bundle.checksum() {
        return Err(Error::Checksum(
            "adapter was trained against a different bundle".into(),
        ));
    }
    let adapter = Adapter {
        kind: file.kind,
        rank: file.rank,
        params: file.params,
    };
    adapter.apply(&bundle.net)?;
    Ok(adapter)
}

pub fn save_adapter(path: &Path, adapter: &Adapter, bundle: &PolicyBundle) -> Result<()> {
    std::fs::write(path, adapter_to_string(adapter, bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_adapter(path: &Path, bundle: &PolicyBundle) -> Result<Adapter> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_adapter(&text, bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn bundle() -> PolicyBundle {
        PolicyBundle::init(5, &[7, 6], &mut Rng::new(11)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        let b = bundle();
        save_bundle(&b, &p).unwrap();
        let loaded = load_bundle(&p).unwrap();
        assert_eq!(loaded, b);
        let p2 = dir.path().join("b2.bin");
        save_bundle(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_a_checksum_error() {
        let bytes = bundle_bytes(&bundle());
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            let err = bundle_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checksum(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = bundle_bytes(&bundle());
        bytes[100] ^= 1;
        assert!(matches!(bundle_from_bytes(&bytes), Err(Error::Checksum(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = bundle_bytes(&bundle());
        bytes[4] = 9;
        let n = bytes.len() - 32;
        let digest = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&digest);
        assert!(matches!(
            bundle_from_bytes(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn latent_dimension_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.bin");
        save_bundle(&bundle(), &p).unwrap();
        assert!(load_bundle_expecting(&p, 5).is_ok());
        let err = load_bundle_expecting(&p, 32).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                expected: 32,
                actual: 5,
                ..
            }
        ));
    }

    #[test]
    fn adapter_file_round_trips_and_names_its_bundle() {
        let b = bundle();
        let mut rng = Rng::new(2);
        let mut a = Adapter::new(AdapterKind::LowRank, &b.net, 2, &mut rng);
        a.params[0] = 0.1 + 0.2;
        let text = adapter_to_string(&a, &b);
        assert_eq!(parse_adapter(&text, &b).unwrap(), a);
        let other = PolicyBundle::init(5, &[7, 6], &mut Rng::new(12)).unwrap();
        assert!(matches!(
            parse_adapter(&text, &other),
            Err(Error::Checksum(_))
        ));
        assert!(parse_adapter("{}", &b).is_err());
    }
}
