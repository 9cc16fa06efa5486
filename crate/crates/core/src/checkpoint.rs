//! Versioned binary model checkpoints.
//!
//! Layout: magic bytes `UTOS`, format version (u32, little-endian), then a
//! sequence of sections. Each section is a 4-byte ASCII tag, a u64
//! little-endian payload length, and the payload:
//!
//! | tag    | payload                                              |
//! |--------|------------------------------------------------------|
//! | `ENCD` | encoder configuration, JSON                          |
//! | `VOCB` | vocabulary word list, JSON array                     |
//! | `PARM` | all encoder parameters, little-endian f64 blobs in   |
//! |        | declared tensor order                                |
//! | `SVCM` | optional trained SVC (support vectors, coefficients, |
//! |        | bias, hyperparameters, scaler stats), JSON           |
//!
//! `ENCD`, `VOCB` and `PARM` are required and must appear in that order;
//! `SVCM` is optional. Writing is deterministic: the same model produces
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::encoder::{EncoderConfig, EncoderModel, Vocabulary};
use crate::error::{Error, Result};
use crate::svc::SvcModel;

const MAGIC: &[u8; 4] = b"UTOS";
const FORMAT_VERSION: u32 = 1;

fn corrupt(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

fn write_section(out: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> std::io::Result<()> {
    out.write_all(tag)?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(payload)
}

/// Serialize an encoder (and, optionally, a trained SVC riding along with
/// it) to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &EncoderModel,
    svc: Option<&SvcModel>,
) -> Result<()> {
    let loc = path.as_ref().display().to_string();
    let ioerr = |e: std::io::Error| Error::io(loc.clone(), e);

    let config_json = serde_json::to_vec(&model.config)
        .map_err(|e| corrupt(format!("cannot serialize config: {e}")))?;
    let vocab_json = serde_json::to_vec(model.vocab.words())
        .map_err(|e| corrupt(format!("cannot serialize vocabulary: {e}")))?;
    let mut params = Vec::new();
    for (_, values) in model.params.tensors() {
        for &v in values {
            params.extend_from_slice(&v.to_le_bytes());
        }
    }
    let svc_json = svc
        .map(|m| serde_json::to_vec(m))
        .transpose()
        .map_err(|e| corrupt(format!("cannot serialize SVC: {e}")))?;

    let file = File::create(path.as_ref()).map_err(&ioerr)?;
    let mut out = BufWriter::new(file);
    (|| {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        write_section(&mut out, b"ENCD", &config_json)?;
        write_section(&mut out, b"VOCB", &vocab_json)?;
        write_section(&mut out, b"PARM", &params)?;
        if let Some(json) = &svc_json {
            write_section(&mut out, b"SVCM", json)?;
        }
        out.flush()
    })()
    .map_err(ioerr)
}

struct SectionReader<R: Read> {
    inner: R,
}

impl<R: Read> SectionReader<R> {
    /// Next (tag, payload) pair, or None at a clean end of file.
    fn next_section(&mut self) -> Result<Option<([u8; 4], Vec<u8>)>> {
        let mut tag = [0u8; 4];
        match self.inner.read(&mut tag).map_err(|e| corrupt(e.to_string()))? {
            0 => return Ok(None),
            4 => {}
            n => return Err(corrupt(format!("truncated section tag ({n} bytes)"))),
        }
        let mut len = [0u8; 8];
        self.inner
            .read_exact(&mut len)
            .map_err(|_| corrupt(format!("truncated length of section {}", tag_name(&tag))))?;
        let len = u64::from_le_bytes(len);
        // Read through `take` so a corrupt length cannot trigger a huge
        // up-front allocation.
        let mut payload = Vec::new();
        let got = (&mut self.inner)
            .take(len)
            .read_to_end(&mut payload)
            .map_err(|e| corrupt(e.to_string()))?;
        if got as u64 != len {
            return Err(corrupt(format!(
                "section {} promises {len} bytes but the file ends after {got}",
                tag_name(&tag)
            )));
        }
        Ok(Some((tag, payload)))
    }
}

fn tag_name(tag: &[u8; 4]) -> String {
    String::from_utf8_lossy(tag).into_owned()
}

/// Read a checkpoint back: the encoder and, when present, the trained SVC.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EncoderModel, Option<SvcModel>)> {
    let loc = path.as_ref().display().to_string();
    let file = File::open(path.as_ref()).map_err(|e| Error::io(loc, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| corrupt("file too short for magic bytes"))?;
    if &magic != MAGIC {
        return Err(corrupt(format!(
            "bad magic bytes {:?}, expected \"UTOS\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut version = [0u8; 4];
    reader
        .read_exact(&mut version)
        .map_err(|_| corrupt("file too short for format version"))?;
    let version = u32::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version}, this reader understands {FORMAT_VERSION}"
        )));
    }

    let mut sections = SectionReader { inner: reader };
    let (config, vocab): (EncoderConfig, Vocabulary) = {
        let (tag, payload) = sections
            .next_section()?
            .ok_or_else(|| corrupt("missing ENCD section"))?;
        if &tag != b"ENCD" {
            return Err(corrupt(format!("expected ENCD section, found {}", tag_name(&tag))));
        }
        let config: EncoderConfig = serde_json::from_slice(&payload)
            .map_err(|e| corrupt(format!("bad ENCD payload: {e}")))?;

        let (tag, payload) = sections
            .next_section()?
            .ok_or_else(|| corrupt("missing VOCB section"))?;
        if &tag != b"VOCB" {
            return Err(corrupt(format!("expected VOCB section, found {}", tag_name(&tag))));
        }
        let words: Vec<String> = serde_json::from_slice(&payload)
            .map_err(|e| corrupt(format!("bad VOCB payload: {e}")))?;
        let vocab = Vocabulary::from_words(words)
            .map_err(|e| corrupt(format!("bad VOCB payload: {e}")))?;
        (config, vocab)
    };

    let (tag, payload) = sections
        .next_section()?
        .ok_or_else(|| corrupt("missing PARM section"))?;
    if &tag != b"PARM" {
        return Err(corrupt(format!("expected PARM section, found {}", tag_name(&tag))));
    }
    if payload.len() % 8 != 0 {
        return Err(corrupt(format!(
            "PARM payload length {} is not a multiple of 8",
            payload.len()
        )));
    }

    let mut model = crate::encoder::init_encoder(config, vocab)
        .map_err(|e| corrupt(format!("invalid checkpoint config: {e}")))?;
    let expected: usize = model.params.tensors().iter().map(|(_, v)| v.len()).sum();
    if payload.len() / 8 != expected {
        return Err(corrupt(format!(
            "PARM holds {} parameters, config implies {expected}",
            payload.len() / 8
        )));
    }
    let mut offset = 0;
    for (name, values) in model.params.tensors_mut() {
        for v in values {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&payload[offset..offset + 8]);
            let x = f64::from_le_bytes(raw);
            if !x.is_finite() {
                return Err(corrupt(format!("non-finite parameter in tensor {name}")));
            }
            *v = x;
            offset += 8;
        }
    }

    let svc = match sections.next_section()? {
        None => None,
        Some((tag, payload)) if &tag == b"SVCM" => Some(
            serde_json::from_slice::<SvcModel>(&payload)
                .map_err(|e| corrupt(format!("bad SVCM payload: {e}")))?,
        ),
        Some((tag, _)) => {
            return Err(corrupt(format!("unexpected section {}", tag_name(&tag))));
        }
    };
    if sections.next_section()?.is_some() {
        return Err(corrupt("trailing data after final section"));
    }
    Ok((model, svc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthesize_corpus;
    use crate::encoder::{init_encoder, pretrain_mlm};
    use crate::svc::{train_svc, GammaSpec, SvcHyperparams};

    fn trained_model() -> EncoderModel {
        let corpus = synthesize_corpus(20, 0.3, 3, 24).unwrap();
        let vocab = Vocabulary::build(corpus.sentences().iter().map(|s| s.text.as_str()), 64);
        let config = EncoderConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 12,
            vocab_size: vocab.size(),
            max_tokens: 24,
            layer_norm_eps: 1e-12,
            seed: 5,
        };
        let model = init_encoder(config, vocab).unwrap();
        pretrain_mlm(&model, &corpus, 0.15, 10, 0.1, 1).unwrap()
    }

    fn toy_svc() -> SvcModel {
        let data = crate::resample::SampleSet::from_real(
            vec![
                vec![0.0, 0.0],
                vec![0.1, 0.2],
                vec![1.0, 1.0],
                vec![0.9, 1.1],
            ],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let params = SvcHyperparams {
            c: 1.0,
            gamma: GammaSpec::Auto,
            ..SvcHyperparams::default()
        };
        train_svc(&data, &params, false, 0).unwrap()
    }

    #[test]
    fn round_trips_encoder_and_svc() {
        let model = trained_model();
        let svc = toy_svc();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.utos");
        save_checkpoint(&path, &model, Some(&svc)).unwrap();
        let (back, svc_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(svc_back.as_ref(), Some(&svc));
    }

    #[test]
    fn round_trips_without_svc() {
        let model = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bare.utos");
        save_checkpoint(&path, &model, None).unwrap();
        let (back, svc_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(svc_back, None);
    }

    #[test]
    fn writes_are_deterministic() {
        let model = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.utos");
        let b = dir.path().join("b.utos");
        save_checkpoint(&a, &model, None).unwrap();
        save_checkpoint(&b, &model, None).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_corrupted_files() {
        let model = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("good.utos");
        save_checkpoint(&path, &model, None).unwrap();
        let good = std::fs::read(&path).unwrap();

        let check = |bytes: Vec<u8>, what: &str| {
            let p = dir.path().join("bad.utos");
            std::fs::write(&p, bytes).unwrap();
            match load_checkpoint(&p) {
                Err(Error::Checkpoint(_)) => {}
                other => panic!("{what}: expected checkpoint error, got {other:?}"),
            }
        };

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        check(bad_magic, "bad magic");

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        check(bad_version, "unsupported version");

        check(good[..good.len() - 3].to_vec(), "truncated tail");
        check(good[..10].to_vec(), "truncated header");

        let mut trailing = good.clone();
        trailing.extend_from_slice(b"JUNKJUNKJUNK");
        check(trailing, "trailing garbage");

        // Flip one parameter to NaN: PARM payload starts after the two JSON
        // sections; corrupt the last 8 bytes (tail of the final tensor).
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        check(nan, "non-finite parameter");
    }

    #[test]
    fn rejects_parameter_count_mismatch() {
        let model = trained_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.utos");
        save_checkpoint(&path, &model, None).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Drop the final 8-byte parameter and patch no lengths: the PARM
        // length now lies, which must surface as a checkpoint error.
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }
}
