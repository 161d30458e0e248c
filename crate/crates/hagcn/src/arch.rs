//! The dash-separated architecture grammar.
//!
//! `gcn_{1,2}` (or `gcn{1,2}`) is a multi-order graph convolution, an `adp_`
//! prefix marks it adaptive, `fc64` is a fully connected layer, `ReLU` and
//! `softmax` are activations, `dconv` is the inner-product edge decoder, and
//! `[...]*2` repeats a group. Parsing expands repetition groups; `Display`
//! writes the canonical `gcn_{...}` spelling.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArchError {
    #[error("empty architecture string")]
    Empty,
    #[error("empty token at offset {offset}")]
    EmptyToken { offset: usize },
    #[error("unknown token `{token}` at offset {offset}")]
    UnknownToken { token: String, offset: usize },
    #[error("bad order set in `{token}` at offset {offset}: {reason}")]
    BadOrderSet {
        token: String,
        offset: usize,
        reason: String,
    },
    #[error("bad width in `{token}` at offset {offset}: expected fc<positive integer>")]
    BadFcWidth { token: String, offset: usize },
    #[error("unbalanced bracket at offset {offset}")]
    Unbalanced { offset: usize },
    #[error("bad repetition `{token}` at offset {offset}: expected `[...]*N` with N >= 1")]
    BadRepetition { token: String, offset: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerDesc {
    Gconv { orders: Vec<usize>, adaptive: bool },
    Fc { width: usize },
    Relu,
    Softmax,
    Dconv,
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Gconv { orders, adaptive } => {
                if *adaptive {
                    write!(f, "adp_")?;
                }
                write!(f, "gcn_{{")?;
                for (i, k) in orders.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{k}")?;
                }
                write!(f, "}}")
            }
            LayerDesc::Fc { width } => write!(f, "fc{width}"),
            LayerDesc::Relu => write!(f, "ReLU"),
            LayerDesc::Softmax => write!(f, "softmax"),
            LayerDesc::Dconv => write!(f, "dconv"),
        }
    }
}

/// A parsed architecture: the ordered layer descriptors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    layers: Vec<LayerDesc>,
}

impl ArchitectureSpec {
    pub fn parse(s: &str) -> Result<Self, ArchError> {
        if s.trim().is_empty() {
            return Err(ArchError::Empty);
        }
        let mut layers = Vec::new();
        parse_into(s, 0, &mut layers)?;
        Ok(ArchitectureSpec { layers })
    }

    pub fn from_layers(layers: Vec<LayerDesc>) -> Self {
        ArchitectureSpec { layers }
    }

    pub fn layers(&self) -> &[LayerDesc] {
        &self.layers
    }

    /// True when some gconv layer carries the `adp_` prefix.
    pub fn has_adaptive(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerDesc::Gconv { adaptive: true, .. }))
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                write!(f, "-")?;
            }
            write!(f, "{layer}")?;
        }
        Ok(())
    }
}

impl FromStr for ArchitectureSpec {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, ArchError> {
        ArchitectureSpec::parse(s)
    }
}

/// Splits on `-` outside square brackets, keeping each token's byte offset.
fn tokenize(s: &str, base: usize) -> Result<Vec<(&str, usize)>, ArchError> {
    let mut tokens = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or(ArchError::Unbalanced { offset: base + i })?;
            }
            '-' if depth == 0 => {
                tokens.push((&s[start..i], base + start));
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(ArchError::Unbalanced {
            offset: base + s.len(),
        });
    }
    tokens.push((&s[start..], base + start));
    Ok(tokens)
}

fn parse_into(s: &str, base: usize, out: &mut Vec<LayerDesc>) -> Result<(), ArchError> {
    for (token, offset) in tokenize(s, base)? {
        if token.is_empty() {
            return Err(ArchError::EmptyToken { offset });
        }
        if let Some(rest) = token.strip_prefix('[') {
            let mut depth = 1usize;
            let mut close = None;
            for (i, c) in rest.char_indices() {
                match c {
                    '[' => depth += 1,
                    ']' => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(i);
                            break;
                        }
                    }
                    _ => {}
                }
            }
            let close = close.ok_or(ArchError::Unbalanced { offset })?;
            let inner = &rest[..close];
            let count = rest[close + 1..]
                .strip_prefix('*')
                .and_then(|c| c.parse::<usize>().ok())
                .filter(|&c| c >= 1)
                .ok_or_else(|| ArchError::BadRepetition {
                    token: token.to_string(),
                    offset,
                })?;
            let mut group = Vec::new();
            parse_into(inner, offset + 1, &mut group)?;
            for _ in 0..count {
                out.extend(group.iter().cloned());
            }
        } else {
            out.push(parse_plain(token, offset)?);
        }
    }
    Ok(())
}

fn parse_plain(token: &str, offset: usize) -> Result<LayerDesc, ArchError> {
    if token.eq_ignore_ascii_case("relu") {
        return Ok(LayerDesc::Relu);
    }
    if token.eq_ignore_ascii_case("softmax") {
        return Ok(LayerDesc::Softmax);
    }
    if token.eq_ignore_ascii_case("dconv") {
        return Ok(LayerDesc::Dconv);
    }
    let (body, adaptive) = match token.strip_prefix("adp_") {
        Some(rest) => (rest, true),
        None => (token, false),
    };
    if let Some(rest) = body.strip_prefix("gcn") {
        let orders = parse_orders(rest, token, offset)?;
        return Ok(LayerDesc::Gconv { orders, adaptive });
    }
    if !adaptive {
        if let Some(rest) = token.strip_prefix("fc") {
            let width = rest
                .parse::<usize>()
                .ok()
                .filter(|&w| w >= 1)
                .ok_or_else(|| ArchError::BadFcWidth {
                    token: token.to_string(),
                    offset,
                })?;
            return Ok(LayerDesc::Fc { width });
        }
    }
    Err(ArchError::UnknownToken {
        token: token.to_string(),
        offset,
    })
}

fn parse_orders(rest: &str, token: &str, offset: usize) -> Result<Vec<usize>, ArchError> {
    let bad = |reason: &str| ArchError::BadOrderSet {
        token: token.to_string(),
        offset,
        reason: reason.to_string(),
    };
    let rest = rest.strip_prefix('_').unwrap_or(rest);
    let inner = rest
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| bad("expected `{k1,k2,...}`"))?;
    let mut orders = Vec::new();
    for part in inner.split(',') {
        let k = part
            .trim()
            .parse::<usize>()
            .map_err(|_| bad("orders must be integers"))?;
        if k == 0 {
            return Err(bad("orders must be >= 1"));
        }
        if orders.contains(&k) {
            return Err(bad("orders must be distinct"));
        }
        orders.push(k);
    }
    Ok(orders)
}
