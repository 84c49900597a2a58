//! Binary checkpoints: 8-byte magic "SPKGRD01", versioned little-endian
//! header, JSON model-spec echo, then raw 32-bit float parameter arrays.
//! Save -> load -> save is byte-identical.

use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SPKGRD01";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub epoch: u32,
    pub rng: Rng,
}

fn write_f32s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    for &v in data {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(r.read_f32::<LittleEndian>()? as f64);
    }
    Ok(out)
}

pub fn save_checkpoint<P: AsRef<Path>>(path: P, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(ckpt.epoch)?;
    let (key, counter) = ckpt.rng.state();
    w.write_u64::<LittleEndian>(key)?;
    w.write_u64::<LittleEndian>(counter)?;
    let spec = serde_json::to_vec(&ckpt.model.spec)
        .map_err(|e| Error::Format(format!("spec serialization: {}", e)))?;
    w.write_u32::<LittleEndian>(spec.len() as u32)?;
    w.write_all(&spec)?;
    for layer in &ckpt.model.layers {
        write_f32s(&mut w, layer.weight.data())?;
        write_f32s(&mut w, &layer.tdbn.lambda)?;
        write_f32s(&mut w, &layer.tdbn.beta)?;
        write_f32s(&mut w, &layer.tdbn.running_mean)?;
        write_f32s(&mut w, &layer.tdbn.running_var)?;
    }
    write_f32s(&mut w, ckpt.model.readout_w.data())?;
    write_f32s(&mut w, ckpt.model.readout_b.data())?;
    Ok(())
}

pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {}", version)));
    }
    let epoch = r.read_u32::<LittleEndian>()?;
    let key = r.read_u64::<LittleEndian>()?;
    let counter = r.read_u64::<LittleEndian>()?;
    let spec_len = r.read_u32::<LittleEndian>()? as usize;
    let mut spec_bytes = vec![0u8; spec_len];
    r.read_exact(&mut spec_bytes)?;
    let spec: ModelSpec = serde_json::from_slice(&spec_bytes)
        .map_err(|e| Error::Format(format!("spec parse: {}", e)))?;

    let mut model = Model::init(spec, &Rng::new(0))?;
    for layer in &mut model.layers {
        let shape = layer.weight.shape().to_vec();
        let n = layer.weight.len();
        layer.weight = Tensor::from_vec(&shape, read_f32s(&mut r, n)?)?;
        let c = layer.tdbn.channels();
        layer.tdbn.lambda = read_f32s(&mut r, c)?;
        layer.tdbn.beta = read_f32s(&mut r, c)?;
        layer.tdbn.running_mean = read_f32s(&mut r, c)?;
        layer.tdbn.running_var = read_f32s(&mut r, c)?;
    }
    let shape = model.readout_w.shape().to_vec();
    let n = model.readout_w.len();
    model.readout_w = Tensor::from_vec(&shape, read_f32s(&mut r, n)?)?;
    let shape = model.readout_b.shape().to_vec();
    let n = model.readout_b.len();
    model.readout_b = Tensor::from_vec(&shape, read_f32s(&mut r, n)?)?;

    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    Ok(Checkpoint {
        model,
        epoch,
        rng: Rng::from_state(key, counter),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Coding;
    use crate::lif::LifParams;
    use crate::model::{HiddenLayerSpec, ModelSpec};
    use crate::surrogate::SurrogateSpec;
    use tempfile::tempdir;

    fn spec() -> ModelSpec {
        ModelSpec {
            input_shape: vec![4],
            hidden: vec![HiddenLayerSpec::Dense { units: 3 }],
            classes: 2,
            t_steps: 2,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::triangle(1.0),
            tdbn_alpha: 1.0,
            coding: Coding::Direct,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let model = Model::init(spec(), &Rng::new(11)).unwrap();
        let ckpt = Checkpoint {
            model,
            epoch: 7,
            rng: Rng::from_state(123, 456),
        };
        save_checkpoint(&p1, &ckpt).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.epoch, 7);
        assert_eq!(loaded.rng.state(), (123, 456));
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_model_predicts_like_saved_one() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let mut model = Model::init(spec(), &Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let x = rng.uniform_tensor(&[6, 4], 0.0, 1.0);
        model.forward(&x, true, None).unwrap(); // move running stats off init
        save_checkpoint(
            &p,
            &Checkpoint {
                model: model.clone(),
                epoch: 0,
                rng: Rng::new(0),
            },
        )
        .unwrap();
        let mut loaded = load_checkpoint(&p).unwrap().model;
        // f32 storage: predictions agree although parameters are rounded
        assert_eq!(
            model.predict(&x, None).unwrap(),
            loaded.predict(&x, None).unwrap()
        );
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        std::fs::write(&p, b"NOTMAGIC????????").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        let model = Model::init(spec(), &Rng::new(1)).unwrap();
        save_checkpoint(
            &p,
            &Checkpoint {
                model,
                epoch: 0,
                rng: Rng::new(0),
            },
        )
        .unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
