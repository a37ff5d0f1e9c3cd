use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::{Architecture, ModelParams};

const MAGIC: &str = "lstm-am-abc-model 1";

/// Comment lines, the architecture header, then one parameter per line in
/// canonical order.
pub fn format_model(model: &ModelParams, comments: &[String]) -> String {
    let arch = &model.arch;
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "input_dim {}", arch.input_dim);
    let _ = writeln!(out, "hidden_dim {}", arch.hidden_dim);
    let hidden: Vec<String> = arch.ffn_hidden.iter().map(|h| h.to_string()).collect();
    let _ = writeln!(out, "ffn_hidden {}", hidden.join(" "));
    let _ = writeln!(out, "params {}", arch.param_count());
    for x in model.flatten().iter() {
        let _ = writeln!(out, "{x}");
    }
    out
}

pub fn save_model(model: &ModelParams, path: impl AsRef<Path>, comments: &[String]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_model(model, comments)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text).map_err(|e| e.in_file(path))
}

pub fn parse_model(text: &str) -> Result<ModelParams> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(0, format!("missing {what}")));

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(Error::parse(n, format!("expected `{MAGIC}`")));
    }
    let mut field = |key: &str| -> Result<(usize, Vec<usize>)> {
        let (n, line) = next(key)?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(Error::parse(n, format!("expected `{key}`")));
        }
        let values = parts
            .map(|p| p.parse().map_err(|_| Error::parse(n, format!("bad {key} value {p:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        Ok((n, values))
    };
    let single = |(n, v): (usize, Vec<usize>), key: &str| -> Result<usize> {
        match v.as_slice() {
            [x] => Ok(*x),
            _ => Err(Error::parse(n, format!("`{key}` takes one value"))),
        }
    };
    let input_dim = single(field("input_dim")?, "input_dim")?;
    let hidden_dim = single(field("hidden_dim")?, "hidden_dim")?;
    let (_, ffn_hidden) = field("ffn_hidden")?;
    let (pn, p) = field("params")?;
    let count = single((pn, p), "params")?;
    let arch = Architecture::new(input_dim, hidden_dim, ffn_hidden)?;
    if count != arch.param_count() {
        return Err(Error::parse(
            pn,
            format!("header declares {count} parameters, architecture has {}", arch.param_count()),
        ));
    }
    let values = lines
        .map(|(n, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::parse(n, format!("bad parameter {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::unflatten(&values, &arch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn model_file_round_trip() {
        let arch = Architecture::new(3, 2, vec![4, 3]).unwrap();
        let m = ModelParams::init_random(&arch, 0.9, &mut Rng::new(12)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save_model(&m, &path, &["init = random".into()]).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);

        let no_hidden = Architecture::new(2, 1, vec![]).unwrap();
        let z = ModelParams::zeros(&no_hidden);
        assert_eq!(parse_model(&format_model(&z, &[])).unwrap(), z);
    }

    #[test]
    fn truncated_model_is_rejected() {
        let arch = Architecture::new(2, 1, vec![]).unwrap();
        let text = format_model(&ModelParams::zeros(&arch), &[]);
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(parse_model(&cut).is_err());
    }
}
