//! Binary persistence for signals, feature sequences, KPCA models and
//! training checkpoints. All formats are little-endian f64 with small
//! self-describing headers, so identical inputs serialize byte-identically.

use crate::corpus::Charset;
use crate::features::FeatureSequence;
use crate::kpca::{KernelParams, KpcaModel};
use crate::net::{init_params, NetworkConfig, NetworkParams};
use crate::signal::MultiChannelSignal;
use ndarray::Array2;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
}

const SIGNAL_MAGIC: &[u8; 4] = b"SIG1";
const FEATURE_MAGIC: &[u8; 4] = b"FEA1";
const KPCA_MAGIC: &[u8; 4] = b"KPC1";
const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: &[u8; 4]) -> Self {
        Writer {
            buf: magic.to_vec(),
        }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn matrix(&mut self, m: &Array2<f64>) {
        self.u64(m.nrows() as u64);
        self.u64(m.ncols() as u64);
        for v in m.iter() {
            self.f64(*v);
        }
    }
    fn finish(self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, &self.buf).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn open(data: &'a [u8], path: &'a Path, magic: &[u8; 4]) -> Result<Self, IoError> {
        let mut r = Reader { data, pos: 0, path };
        let got = r.bytes(4)?;
        if got != magic {
            return Err(r.err("bad magic"));
        }
        Ok(r)
    }
    fn err(&self, message: &str) -> IoError {
        IoError::Format {
            path: self.path.to_path_buf(),
            message: message.to_string(),
        }
    }
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.data.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, IoError> {
        let n = self.u32()? as usize;
        let raw = self.bytes(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("invalid UTF-8 string"))
    }
    fn matrix(&mut self) -> Result<Array2<f64>, IoError> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|_| self.err("bad matrix shape"))
    }
    fn done(&self) -> Result<(), IoError> {
        if self.pos != self.data.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Channel-major signal file: header plus `channels x samples` f64 data.
pub fn write_signal(path: &Path, signal: &MultiChannelSignal) -> Result<(), IoError> {
    let mut w = Writer::new(SIGNAL_MAGIC);
    w.f64(signal.sample_rate_hz);
    w.u32(signal.channel_names.len() as u32);
    for name in &signal.channel_names {
        w.str(name);
    }
    w.matrix(&signal.samples);
    w.finish(path)
}

pub fn read_signal(path: &Path) -> Result<MultiChannelSignal, IoError> {
    let data = read_file(path)?;
    let mut r = Reader::open(&data, path, SIGNAL_MAGIC)?;
    let sample_rate_hz = r.f64()?;
    let n = r.u32()? as usize;
    let mut channel_names = Vec::with_capacity(n);
    for _ in 0..n {
        channel_names.push(r.str()?);
    }
    let samples = r.matrix()?;
    r.done()?;
    if samples.nrows() != n {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            message: format!("{} channel names but {} rows", n, samples.nrows()),
        });
    }
    MultiChannelSignal::new(samples, sample_rate_hz, channel_names).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Frame-major feature file: header plus `frames x dim` f64 data.
pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<(), IoError> {
    let mut w = Writer::new(FEATURE_MAGIC);
    w.f64(features.frame_rate_hz);
    w.str(&features.descriptor);
    w.matrix(&features.frames);
    w.finish(path)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence, IoError> {
    let data = read_file(path)?;
    let mut r = Reader::open(&data, path, FEATURE_MAGIC)?;
    let frame_rate_hz = r.f64()?;
    let descriptor = r.str()?;
    let frames = r.matrix()?;
    r.done()?;
    Ok(FeatureSequence {
        frames,
        frame_rate_hz,
        descriptor,
    })
}

pub fn write_kpca_model(path: &Path, model: &KpcaModel) -> Result<(), IoError> {
    let mut w = Writer::new(KPCA_MAGIC);
    w.u32(model.kernel.degree);
    w.f64(model.kernel.scale);
    w.f64(model.kernel.offset);
    w.matrix(&model.training_frames);
    w.matrix(&model.projection_vectors);
    w.u64(model.eigenvalues.len() as u64);
    for &v in &model.eigenvalues {
        w.f64(v);
    }
    w.u64(model.target_dim as u64);
    w.u8(model.rank_deficient as u8);
    w.str(&model.descriptor);
    w.u64(model.row_means.len() as u64);
    for &v in &model.row_means {
        w.f64(v);
    }
    w.f64(model.grand_mean);
    w.finish(path)
}

pub fn read_kpca_model(path: &Path) -> Result<KpcaModel, IoError> {
    let data = read_file(path)?;
    let mut r = Reader::open(&data, path, KPCA_MAGIC)?;
    let kernel = KernelParams {
        degree: r.u32()?,
        scale: r.f64()?,
        offset: r.f64()?,
    };
    let training_frames = r.matrix()?;
    let projection_vectors = r.matrix()?;
    let n_eig = r.u64()? as usize;
    let mut eigenvalues = Vec::with_capacity(n_eig);
    for _ in 0..n_eig {
        eigenvalues.push(r.f64()?);
    }
    let target_dim = r.u64()? as usize;
    let rank_deficient = r.u8()? != 0;
    let descriptor = r.str()?;
    let n_means = r.u64()? as usize;
    let mut row_means = Vec::with_capacity(n_means);
    for _ in 0..n_means {
        row_means.push(r.f64()?);
    }
    let grand_mean = r.f64()?;
    r.done()?;
    Ok(KpcaModel {
        training_frames,
        kernel,
        eigenvalues,
        projection_vectors,
        target_dim,
        rank_deficient,
        descriptor,
        row_means,
        grand_mean,
    })
}

/// Per-dimension standardization fitted on the training split, applied to
/// network inputs when the raw front end is used.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// A trained (or initial) model: architecture, charset, tensors, optimizer
/// state, and optional input normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub charset: Charset,
    pub params: NetworkParams,
    pub input_norm: Option<InputNorm>,
}

fn write_config(w: &mut Writer, c: &NetworkConfig) {
    w.u8(c.use_raw_front_end as u8);
    for v in [
        c.conv_filters,
        c.conv_kernel,
        c.pool_size,
        c.pool_stride,
        c.gru_layers,
        c.gru_hidden,
        c.input_dim,
        c.vocab_size_with_blank,
    ] {
        w.u32(v as u32);
    }
}

fn read_config(r: &mut Reader) -> Result<NetworkConfig, IoError> {
    let use_raw_front_end = r.u8()? != 0;
    let mut vals = [0usize; 8];
    for v in vals.iter_mut() {
        *v = r.u32()? as usize;
    }
    Ok(NetworkConfig {
        use_raw_front_end,
        conv_filters: vals[0],
        conv_kernel: vals[1],
        pool_size: vals[2],
        pool_stride: vals[3],
        gru_layers: vals[4],
        gru_hidden: vals[5],
        input_dim: vals[6],
        vocab_size_with_blank: vals[7],
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), IoError> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    w.u8(1); // version
    write_config(&mut w, &ckpt.config);
    w.str(&ckpt.charset.characters().iter().collect::<String>());
    w.u64(ckpt.params.adam.step);
    for set in [
        &ckpt.params.weights,
        &ckpt.params.adam.m,
        &ckpt.params.adam.v,
    ] {
        for (_, t) in set.tensors() {
            w.matrix(t);
        }
    }
    match &ckpt.input_norm {
        None => w.u8(0),
        Some(norm) => {
            w.u8(1);
            w.u64(norm.mean.len() as u64);
            for &v in &norm.mean {
                w.f64(v);
            }
            for &v in &norm.std {
                w.f64(v);
            }
        }
    }
    w.finish(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, IoError> {
    let data = read_file(path)?;
    let mut r = Reader::open(&data, path, CHECKPOINT_MAGIC)?;
    if r.u8()? != 1 {
        return Err(r.err("unsupported checkpoint version"));
    }
    let config = read_config(&mut r)?;
    let charset = Charset::from_chars(r.str()?.chars());
    let step = r.u64()?;
    // Rebuild the parameter layout from the config, then overwrite tensors.
    let mut params = init_params(&config, 0).map_err(|e| IoError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    params.adam.step = step;
    for set in [
        &mut params.weights,
        &mut params.adam.m,
        &mut params.adam.v,
    ] {
        for (name, t) in set.tensors_mut() {
            let m = r.matrix()?;
            if m.raw_dim() != t.raw_dim() {
                return Err(IoError::Format {
                    path: path.to_path_buf(),
                    message: format!(
                        "tensor {name}: stored {:?} vs expected {:?}",
                        m.shape(),
                        t.shape()
                    ),
                });
            }
            *t = m;
        }
    }
    let input_norm = if r.u8()? != 0 {
        let n = r.u64()? as usize;
        let mut mean = Vec::with_capacity(n);
        for _ in 0..n {
            mean.push(r.f64()?);
        }
        let mut std = Vec::with_capacity(n);
        for _ in 0..n {
            std.push(r.f64()?);
        }
        Some(InputNorm { mean, std })
    } else {
        None
    };
    r.done()?;
    Ok(Checkpoint {
        config,
        charset,
        params,
        input_norm,
    })
}

/// Hypotheses / references as tab-separated (id, text) lines.
pub fn write_transcript_lines(path: &Path, lines: &[(String, String)]) -> Result<(), IoError> {
    let mut out = String::new();
    for (id, text) in lines {
        out.push_str(id);
        out.push('\t');
        out.push_str(text);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_transcript_lines(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        // A trailing empty hypothesis is a legal line: "id\t".
        let (id, body) = line.split_once('\t').ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: expected 'id<TAB>text'", i + 1),
        })?;
        out.push((id.to_string(), body.to_string()));
    }
    Ok(out)
}

// Keep the std Read/Write imports referenced even though files go through
// std::fs convenience wrappers today.
#[allow(dead_code)]
fn _assert_traits<T: Read + Write>() {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Charset;
    use crate::kpca::{fit_kpca, KernelParams};
    use ndarray::array;

    #[test]
    fn signal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.sig");
        let sig = MultiChannelSignal::new(
            array![[1.0, -2.5, 3.25], [0.0, 0.5, -0.125]],
            1000.0,
            vec!["T7".into(), "T8".into()],
        )
        .unwrap();
        write_signal(&path, &sig).unwrap();
        let back = read_signal(&path).unwrap();
        assert_eq!(back.samples, sig.samples);
        assert_eq!(back.sample_rate_hz, 1000.0);
        assert_eq!(back.channel_names, sig.channel_names);
    }

    #[test]
    fn signal_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.sig");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_signal(&path), Err(IoError::Format { .. })));
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fea");
        let f = FeatureSequence {
            frames: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            frame_rate_hz: 100.0,
            descriptor: "test features".into(),
        };
        write_features(&path, &f).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.frames, f.frames);
        assert_eq!(back.frame_rate_hz, 100.0);
        assert_eq!(back.descriptor, f.descriptor);
    }

    #[test]
    fn kpca_model_round_trip_preserves_transform() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.kpc");
        let frames = Array2::from_shape_fn((8, 3), |(i, j)| ((i * 3 + j) as f64).sin());
        let model = fit_kpca(&frames, KernelParams::default_for_dim(3), 2).unwrap();
        write_kpca_model(&path, &model).unwrap();
        let back = read_kpca_model(&path).unwrap();
        let test = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64 * 0.1);
        let a = crate::kpca::transform(&model, &test).unwrap();
        let b = crate::kpca::transform(&back, &test).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let config = NetworkConfig {
            use_raw_front_end: true,
            conv_filters: 4,
            conv_kernel: 3,
            pool_size: 2,
            pool_stride: 1,
            gru_layers: 2,
            gru_hidden: 3,
            input_dim: 2,
            vocab_size_with_blank: 5,
        };
        let mut params = init_params(&config, 42).unwrap();
        params.adam.step = 17;
        let ckpt = Checkpoint {
            config,
            charset: Charset::from_chars("ab你d".chars()),
            params,
            input_norm: Some(InputNorm {
                mean: vec![0.5, -1.0],
                std: vec![1.5, 2.0],
            }),
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn checkpoint_serialization_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let config = NetworkConfig::new(2, 3, 1, 4);
        let ckpt = Checkpoint {
            config,
            charset: Charset::from_chars("abc".chars()),
            params: init_params(&config, 9).unwrap(),
            input_norm: None,
        };
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        write_checkpoint(&p1, &ckpt).unwrap();
        write_checkpoint(&p2, &ckpt).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn transcript_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hyp.tsv");
        let lines = vec![
            ("u1".to_string(), "hello world".to_string()),
            ("u2".to_string(), "".to_string()),
            ("u3".to_string(), "你好".to_string()),
        ];
        write_transcript_lines(&path, &lines).unwrap();
        assert_eq!(read_transcript_lines(&path).unwrap(), lines);
    }
}
