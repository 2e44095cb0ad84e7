//! Single-file binary checkpoints.
//!
//! Layout: the magic `TWNT1`, a length-prefixed UTF-8 `key = value`
//! config block (model configuration, preprocessing flags, and both
//! vocabularies), then a count of named tensors, each stored as
//! name, shape, and 64-bit little-endian values.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ConvLayerSpec, Model, ModelConfig};
use crate::autodiff::{real, Scalar};
use crate::embeddings::Vocab;
use crate::error::{Error, Result};
use crate::textproc::ListSources;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"TWNT1";

/// Separator for vocabulary entries inside the config block; tokens
/// never contain control characters after normalization.
const VOCAB_SEP: char = '\u{1f}';

pub fn save_checkpoint<F: Scalar>(model: &Model<F>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;

    let header = encode_header(model)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;

    w.write_all(&(model.store.len() as u32).to_le_bytes())?;
    for (_, meta, tensor) in model.store.iter() {
        let name = meta.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &dim in tensor.shape() {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            let v = v.to_f64().ok_or_else(|| {
                Error::Checkpoint(format!("non-finite value in {}", meta.name))
            })?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Model<F>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }

    let header_len = read_u32(&mut r)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header = String::from_utf8(header)
        .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
    let (config, word_vocab, char_vocab, lists) = decode_header(&header)?;

    // Registering through the normal init path re-derives the expected
    // parameter set and shapes for this configuration.
    let mut model = Model::<F>::init(config, word_vocab, char_vocab, None, 0)?;
    model.set_list_sources(lists);

    let count = read_u32(&mut r)? as usize;
    if count != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {count} tensors, config implies {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name:?}")))?;

        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let mut shape = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape != model.store.get(id).shape() {
            return Err(Error::shape(
                "load_checkpoint",
                format!(
                    "tensor {name:?} has shape {shape:?}, config implies {:?}",
                    model.store.get(id).shape()
                ),
            ));
        }
        let len: usize = shape.iter().product();
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw)?;
        let data = model.store.get_mut(id).data_mut();
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            data[i] = real(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
    }
    Ok(model)
}

fn encode_header<F: Scalar>(model: &Model<F>) -> Result<String> {
    let c = &model.config;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("variant", c.variant.to_string());
    kv("conv1_window", c.conv1.window.to_string());
    kv("conv1_maps", c.conv1.feature_maps.to_string());
    kv("conv2_window", c.conv2.window.to_string());
    kv("conv2_maps", c.conv2.feature_maps.to_string());
    kv("d_char", c.d_char.to_string());
    kv("d_word", c.d_word.to_string());
    kv("lstm_hidden", c.lstm_hidden.to_string());
    kv("num_classes", c.num_classes.to_string());
    kv("dropout", c.dropout.to_string());
    kv("max_word_len", c.max_word_len.to_string());
    kv("max_sent_len", c.max_sent_len.to_string());
    kv("apply_rules", c.apply_rules.to_string());
    kv("remove_stopwords", c.remove_stopwords.to_string());
    kv("freeze_word_embeddings", c.freeze_word_embeddings.to_string());
    kv("word_vocab", encode_vocab(&model.word_vocab)?);
    kv("char_vocab", encode_vocab(&model.char_vocab)?);
    kv("emoticon_list", encode_lines(&model.lists.emoticons)?);
    kv("negative_cue_list", encode_lines(&model.lists.negative_cues)?);
    kv("stopword_list", encode_lines(&model.lists.stopwords)?);
    Ok(out)
}

/// Newline-separated list text flattened onto one header line.
fn encode_lines(text: &str) -> Result<String> {
    if text.contains(VOCAB_SEP) {
        return Err(Error::Checkpoint(
            "list entry contains a reserved character".into(),
        ));
    }
    Ok(text.lines().collect::<Vec<_>>().join(&VOCAB_SEP.to_string()))
}

fn decode_lines(joined: &str) -> String {
    joined.split(VOCAB_SEP).collect::<Vec<_>>().join("\n")
}

fn encode_vocab(vocab: &Vocab) -> Result<String> {
    let mut parts = Vec::with_capacity(vocab.len());
    for s in vocab.symbols() {
        if s.contains(VOCAB_SEP) || s.contains('\n') {
            return Err(Error::Checkpoint(format!(
                "vocabulary symbol {s:?} contains a reserved character"
            )));
        }
        parts.push(s);
    }
    Ok(parts.join(&VOCAB_SEP.to_string()))
}

fn decode_vocab(joined: &str) -> Result<Vocab> {
    let mut vocab = Vocab::new();
    for (i, symbol) in joined.split(VOCAB_SEP).enumerate() {
        match i {
            0 | 1 => {} // reserved entries are implicit in Vocab::new
            _ => {
                vocab.insert(symbol);
            }
        }
    }
    Ok(vocab)
}

fn decode_header(header: &str) -> Result<(ModelConfig, Vocab, Vocab, ListSources)> {
    let mut map = HashMap::new();
    for line in header.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            map.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| Error::Checkpoint(format!("config block missing {k:?}")))
    };
    let parse_usize = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad integer for {k:?}")))
    };
    let parse_bool = |k: &str| -> Result<bool> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad boolean for {k:?}")))
    };

    let config = ModelConfig {
        variant: get("variant")?.parse()?,
        conv1: ConvLayerSpec {
            window: parse_usize("conv1_window")?,
            feature_maps: parse_usize("conv1_maps")?,
        },
        conv2: ConvLayerSpec {
            window: parse_usize("conv2_window")?,
            feature_maps: parse_usize("conv2_maps")?,
        },
        d_char: parse_usize("d_char")?,
        d_word: parse_usize("d_word")?,
        lstm_hidden: parse_usize("lstm_hidden")?,
        num_classes: parse_usize("num_classes")?,
        dropout: get("dropout")?
            .parse()
            .map_err(|_| Error::Checkpoint("bad float for dropout".into()))?,
        max_word_len: parse_usize("max_word_len")?,
        max_sent_len: parse_usize("max_sent_len")?,
        apply_rules: parse_bool("apply_rules")?,
        remove_stopwords: parse_bool("remove_stopwords")?,
        freeze_word_embeddings: parse_bool("freeze_word_embeddings")?,
    };
    let word_vocab = decode_vocab(get("word_vocab")?)?;
    let char_vocab = decode_vocab(get("char_vocab")?)?;
    let lists = ListSources {
        emoticons: decode_lines(get("emoticon_list")?),
        negative_cues: decode_lines(get("negative_cue_list")?),
        stopwords: decode_lines(get("stopword_list")?),
    };
    Ok((config, word_vocab, char_vocab, lists))
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
