//! Binary checkpoints.
//!
//! ```text
//! "VAEBM1" | u32 section count | per section:
//!   u32 name length | name | u32 header length | JSON header | u64 value count | f64 LE values
//! ```
//!
//! Values are the network tensors in declaration order (weight then bias per
//! layer; encoder before decoder). All integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Linear, MlpParams, Tensor};
use crate::ebm::{EnergyNet, VaebmModel};
use crate::error::{Error, Result};
use crate::vae::VaeModel;

pub const MAGIC: &[u8; 6] = b"VAEBM1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetHeader {
    activation: Activation,
    widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct VaeHeader {
    latent_dim: usize,
    encoder: NetHeader,
    decoder: NetHeader,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EnergyHeader {
    l2_coeff: f64,
    net: NetHeader,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub header: String,
    pub values: Vec<f64>,
}

pub fn encode(sections: &[Section]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend((sections.len() as u32).to_le_bytes());
    for s in sections {
        out.extend((s.name.len() as u32).to_le_bytes());
        out.extend(s.name.as_bytes());
        out.extend((s.header.len() as u32).to_le_bytes());
        out.extend(s.header.as_bytes());
        out.extend((s.values.len() as u64).to_le_bytes());
        for v in &s.values {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Section>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing VAEBM1 magic".into()));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let count = r.u32()?;
    let mut sections = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name = r.string()?;
        let header = r.string()?;
        let n = r.u64()? as usize;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("value count overflow".into()))?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        sections.push(Section { name, header, values });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(sections)
}

fn net_header(p: &MlpParams) -> NetHeader {
    NetHeader { activation: p.activation, widths: p.widths() }
}

fn flatten(nets: &[&MlpParams]) -> Vec<f64> {
    nets.iter().flat_map(|n| n.tensors()).flat_map(|t| t.data().iter().copied()).collect()
}

fn rebuild(h: &NetHeader, values: &mut impl Iterator<Item = f64>) -> Result<MlpParams> {
    if h.widths.len() < 2 {
        return Err(Error::Checkpoint(format!("network needs >= 2 widths, got {:?}", h.widths)));
    }
    let mut layers = Vec::new();
    for w in h.widths.windows(2) {
        let mut grab = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() != n {
                return Err(Error::Checkpoint("too few parameter values".into()));
            }
            Ok(v)
        };
        let weight = Tensor::matrix(w[0], w[1], grab(w[0] * w[1])?)?;
        let bias = Tensor::vector(grab(w[1])?);
        layers.push(Linear { weight, bias });
    }
    MlpParams::new(layers, h.activation)
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("header serializes")
}

fn parse<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("bad header: {}", e)))
}

pub fn vae_section(vae: &VaeModel) -> Section {
    let h = VaeHeader { latent_dim: vae.latent_dim, encoder: net_header(&vae.encoder), decoder: net_header(&vae.decoder) };
    Section { name: "vae".into(), header: json(&h), values: flatten(&[&vae.encoder, &vae.decoder]) }
}

pub fn energy_section(e: &EnergyNet) -> Section {
    let h = EnergyHeader { l2_coeff: e.l2_coeff, net: net_header(&e.net) };
    Section { name: "energy".into(), header: json(&h), values: flatten(&[&e.net]) }
}

fn exhaust(values: &mut impl Iterator<Item = f64>, name: &str) -> Result<()> {
    if values.next().is_some() {
        return Err(Error::Checkpoint(format!("section {} has extra values", name)));
    }
    Ok(())
}

pub fn vae_from_section(s: &Section) -> Result<VaeModel> {
    let h: VaeHeader = parse(&s.header)?;
    let mut it = s.values.iter().copied();
    let enc = rebuild(&h.encoder, &mut it)?;
    let dec = rebuild(&h.decoder, &mut it)?;
    exhaust(&mut it, "vae")?;
    VaeModel::new(enc, dec, h.latent_dim)
}

pub fn energy_from_section(s: &Section) -> Result<EnergyNet> {
    let h: EnergyHeader = parse(&s.header)?;
    let mut it = s.values.iter().copied();
    let net = rebuild(&h.net, &mut it)?;
    exhaust(&mut it, "energy")?;
    EnergyNet::new(net, h.l2_coeff)
}

fn find<'a>(sections: &'a [Section], name: &str) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("no {} section", name)))
}

pub fn save_vae(path: &Path, vae: &VaeModel) -> Result<()> {
    std::fs::write(path, encode(&[vae_section(vae)]))?;
    Ok(())
}

/// Reads the VAE section from either checkpoint kind.
pub fn load_vae(path: &Path) -> Result<VaeModel> {
    vae_from_section(find(&decode(&std::fs::read(path)?)?, "vae")?)
}

pub fn save_vaebm(path: &Path, model: &VaebmModel) -> Result<()> {
    std::fs::write(path, encode(&[vae_section(&model.vae), energy_section(&model.energy)]))?;
    Ok(())
}

pub fn load_vaebm(path: &Path) -> Result<VaebmModel> {
    let s = decode(&std::fs::read(path)?)?;
    Ok(VaebmModel { vae: vae_from_section(find(&s, "vae")?)?, energy: energy_from_section(find(&s, "energy")?)? })
}
