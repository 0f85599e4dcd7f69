//! Versioned checkpoint container.
//!
//! ```text
//! KNMT1
//! kind <kind>
//! precision f32|f64
//! meta <key> <value>            (any number)
//! vocab <name> <n>              followed by n token lines
//! alias <view> <storage>        (any number)
//! tensor <name> <d0> <d1> ...   (in parameter order)
//! end
//! <raw little-endian payloads, tensor order>
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelVocabs, Seq2SeqModel};
use crate::corpus::{Vocabulary, RESERVED};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Real, Tensor};

pub const MAGIC: &str = "KNMT1";

/// Decoded checkpoint contents, independent of the model kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Container<F> {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub vocabs: Vec<(String, Vocabulary)>,
    pub aliases: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Container<F> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn vocab(&self, name: &str) -> Option<&Vocabulary> {
        self.vocabs.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

fn bad(field: &str, detail: impl Into<String>) -> Error {
    Error::checkpoint(field, detail)
}

fn check_word(field: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(bad(field, format!("{s:?} is empty or contains whitespace")));
    }
    Ok(())
}

pub fn write_container<F: Real>(path: &Path, c: &Container<F>) -> Result<()> {
    let mut head = format!("{MAGIC}\nkind {}\nprecision {}\n", c.kind, F::PRECISION.name());
    for (k, v) in &c.meta {
        check_word("meta", k)?;
        check_word("meta", v)?;
        head.push_str(&format!("meta {k} {v}\n"));
    }
    for (name, v) in &c.vocabs {
        check_word("vocab", name)?;
        let entries = &v.tokens()[RESERVED.len()..];
        head.push_str(&format!("vocab {name} {}\n", entries.len()));
        for t in entries {
            check_word("vocab", t)?;
            head.push_str(t);
            head.push('\n');
        }
    }
    for (view, storage) in &c.aliases {
        head.push_str(&format!("alias {view} {storage}\n"));
    }
    for (name, t) in &c.tensors {
        check_word("tensor", name)?;
        head.push_str("tensor ");
        head.push_str(name);
        for d in t.shape() {
            head.push_str(&format!(" {d}"));
        }
        head.push('\n');
    }
    head.push_str("end\n");
    let mut bytes = head.into_bytes();
    for (_, t) in &c.tensors {
        F::write_le(t.data(), &mut bytes);
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_container<F: Real>(path: &Path) -> Result<Container<F>> {
    let bytes = fs::read(path)?;
    let mut pos = 0;
    let mut next_line = |field: &str| -> Result<String> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad(field, "file ends inside the header"))?;
        let line = std::str::from_utf8(&rest[..end]).map_err(|_| bad(field, "header is not UTF-8"))?;
        pos += end + 1;
        Ok(line.to_string())
    };

    let magic = next_line("version")?;
    if magic != MAGIC {
        return Err(bad("version", format!("expected {MAGIC}, found {magic:?}")));
    }
    let mut kind = None;
    let mut precision = None;
    let mut meta = Vec::new();
    let mut vocabs = Vec::new();
    let mut aliases = Vec::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let line = next_line("header")?;
        let mut parts = line.split(' ');
        let tag = parts.next().unwrap_or("");
        let args: Vec<&str> = parts.collect();
        match (tag, args.as_slice()) {
            ("end", []) => break,
            ("kind", [k]) => kind = Some(k.to_string()),
            ("precision", [p]) => {
                precision = Some(Precision::parse(p).ok_or_else(|| bad("precision", format!("unknown precision {p:?}")))?)
            }
            ("meta", [k, v]) => meta.push((k.to_string(), v.to_string())),
            ("vocab", [name, n]) => {
                let n: usize = n.parse().map_err(|_| bad("vocab", format!("bad entry count {n:?}")))?;
                let mut tokens = Vec::with_capacity(n);
                for _ in 0..n {
                    tokens.push(next_line("vocab")?);
                }
                let v = Vocabulary::from_tokens(&tokens);
                if v.len() != n + RESERVED.len() {
                    return Err(bad("vocab", format!("vocabulary {name} has duplicate entries")));
                }
                vocabs.push((name.to_string(), v));
            }
            ("alias", [view, storage]) => aliases.push((view.to_string(), storage.to_string())),
            ("tensor", [name, dims @ ..]) if !dims.is_empty() => {
                let dims = dims
                    .iter()
                    .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad(name, format!("bad shape in {line:?}")))?;
                shapes.push((name.to_string(), dims));
            }
            _ => return Err(bad("header", format!("unrecognized line {line:?}"))),
        }
    }
    let kind = kind.ok_or_else(|| bad("kind", "missing"))?;
    let precision = precision.ok_or_else(|| bad("precision", "missing"))?;

    let width = precision.byte_width();
    let mut tensors = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let need = n * width;
        if bytes.len() - pos < need {
            return Err(bad(&name, format!("payload truncated: need {need} bytes, {} left", bytes.len() - pos)));
        }
        let chunk = &bytes[pos..pos + need];
        pos += need;
        let data: Vec<F> = match precision {
            Precision::F32 => f32::read_le(chunk).into_iter().map(|x| F::from_f64_lossy(x as f64)).collect(),
            Precision::F64 => f64::read_le(chunk).into_iter().map(F::from_f64_lossy).collect(),
        };
        tensors.push((name, Tensor::new(&shape, data)?));
    }
    if pos != bytes.len() {
        return Err(bad("payload", format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(Container {
        kind,
        meta,
        vocabs,
        aliases,
        tensors,
    })
}

/// Replace every tensor of `store` with the container's, checking names
/// and shapes in order.
pub(crate) fn restore_tensors<F: Real>(
    store: &mut crate::tensor::ParamStore<F>,
    tensors: Vec<(String, Tensor<F>)>,
) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(bad(
            "tensor",
            format!("checkpoint has {} tensors, configuration implies {}", tensors.len(), store.len()),
        ));
    }
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for (id, (name, t)) in ids.into_iter().zip(tensors) {
        if store.name(id) != name {
            return Err(bad(&name, format!("expected tensor {}", store.name(id))));
        }
        let dst = store.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(bad(&name, format!("shape mismatch: {:?} vs {:?}", t.shape(), dst.shape())));
        }
        dst.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

impl<F: Real> Seq2SeqModel<F> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = vec![("seed".to_string(), self.seed.to_string())];
        meta.extend(self.config.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
        let mut vocabs = Vec::new();
        if let Some(v) = &self.vocabs {
            vocabs.push(("src".to_string(), v.src.clone()));
            vocabs.push(("tgt".to_string(), v.tgt.clone()));
            if let Some(f) = &v.factor {
                vocabs.push(("factor".to_string(), f.clone()));
            }
        }
        let c = Container {
            kind: "nmt".to_string(),
            meta,
            vocabs,
            aliases: self
                .aliases()
                .iter()
                .map(|&(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            tensors: self.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
        };
        write_container(path, &c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container::<F>(path)?;
        if c.kind != "nmt" {
            return Err(bad("kind", format!("expected nmt, found {}", c.kind)));
        }
        let mut config = ModelConfig::default();
        let mut seed = None;
        for (k, v) in &c.meta {
            if k == "seed" {
                seed = Some(v.parse::<u64>().map_err(|_| bad("seed", format!("bad value {v:?}")))?);
            } else if !config.set(k, v).map_err(|e| bad(k, e.to_string()))? {
                return Err(bad(k, "unknown configuration key"));
            }
        }
        let seed = seed.ok_or_else(|| bad("seed", "missing"))?;
        let mut model = Self::build(config, seed).map_err(|e| bad("config", e.to_string()))?;
        let expected: Vec<(String, String)> = model
            .aliases()
            .iter()
            .map(|&(a, b)| (a.to_string(), b.to_string()))
            .collect();
        if c.aliases != expected {
            return Err(bad("alias", format!("{:?} does not match tying mode {}", c.aliases, model.config.tying.name())));
        }
        let vocabs = match (c.vocab("src"), c.vocab("tgt")) {
            (Some(src), Some(tgt)) => Some(ModelVocabs {
                src: src.clone(),
                tgt: tgt.clone(),
                factor: c.vocab("factor").cloned(),
            }),
            _ => None,
        };
        restore_tensors(&mut model.store, c.tensors)?;
        if let Some(v) = vocabs {
            model = model.with_vocabs(v).map_err(|e| bad("vocab", e.to_string()))?;
        }
        Ok(model)
    }
}
