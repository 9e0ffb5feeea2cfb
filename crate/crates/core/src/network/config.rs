//! Text grammar for feature-extractor layer stacks.
//!
//! ```text
//! network := stage ("&" stage)*
//! stage   := COUNT "Deconv(" K ")" | COUNT "Conv(" K ")"
//! ```
//!
//! A config may carry a patch size either as a `P-` prefix (`37-4Conv`) or
//! an `@P` suffix (`1Deconv(3)&2Conv@13`). With a patch size, `Conv` stages
//! may omit their kernel; the remaining reduction down to a 1x1 output is
//! split evenly across them, larger kernels first. The named 37-pixel
//! presets expand to their published kernel lists.

use std::fmt;

use super::layers::{conv_output_size, deconv_output_size, ConvKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: ConvKind,
    pub kernel: usize,
    pub batch_norm: bool,
    pub relu: bool,
}

impl LayerSpec {
    fn conv(kernel: usize) -> Self {
        Self {
            kind: ConvKind::Conv,
            kernel,
            batch_norm: true,
            relu: true,
        }
    }

    fn deconv(kernel: usize) -> Self {
        Self {
            kind: ConvKind::Deconv,
            kernel,
            batch_norm: true,
            relu: false,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            ConvKind::Conv => "Conv",
            ConvKind::Deconv => "Deconv",
        };
        write!(f, "{name}{}", self.kernel)?;
        if self.batch_norm {
            f.write_str("+BN")?;
        }
        if self.relu {
            f.write_str("+ReLU")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub name: String,
    pub patch_size: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    /// Spatial sizes through the stack starting from `input`
    /// (stride 1, no padding), including the input itself.
    pub fn size_chain(&self, input: usize) -> Result<Vec<usize>> {
        let mut sizes = vec![input];
        let mut size = input;
        for l in &self.layers {
            size = match l.kind {
                ConvKind::Conv => conv_output_size(size, l.kernel, 1, 0)?,
                ConvKind::Deconv => deconv_output_size(size, l.kernel, 1, 0)?,
            };
            sizes.push(size);
        }
        Ok(sizes)
    }
}

/// The 37-pixel presets: name and kernel list. `'D'` marks transposed
/// convolutions; the activation pattern follows the published tables.
const PRESETS_37: &[(&str, &[(char, usize)])] = &[
    ("3Conv", &[('C', 13), ('C', 13), ('C', 13)]),
    ("4Conv", &[('C', 10), ('C', 10), ('C', 10), ('C', 10)]),
    ("6Conv", &[('C', 9), ('C', 9), ('C', 7), ('C', 7), ('C', 5), ('C', 5)]),
    (
        "7Conv",
        &[('C', 7), ('C', 7), ('C', 7), ('C', 7), ('C', 5), ('C', 5), ('C', 5)],
    ),
    ("9Conv", &[('C', 5); 9]),
    (
        "11Conv",
        &[
            ('C', 5),
            ('C', 5),
            ('C', 5),
            ('C', 5),
            ('C', 5),
            ('C', 5),
            ('C', 5),
            ('C', 3),
            ('C', 3),
            ('C', 3),
            ('C', 3),
        ],
    ),
    (
        "1Deconv(5)&4Conv",
        &[('D', 5), ('C', 11), ('C', 11), ('C', 11), ('C', 11)],
    ),
    (
        "1Deconv(3)&4Conv",
        &[('D', 3), ('C', 11), ('C', 11), ('C', 10), ('C', 10)],
    ),
    (
        "2Deconv&6Conv",
        &[
            ('D', 3),
            ('D', 5),
            ('C', 9),
            ('C', 9),
            ('C', 9),
            ('C', 7),
            ('C', 7),
            ('C', 7),
        ],
    ),
    // As published: five convolutions, which leaves a 13x13 output.
    (
        "3Deconv&6Conv",
        &[
            ('D', 3),
            ('D', 5),
            ('D', 7),
            ('C', 9),
            ('C', 9),
            ('C', 9),
            ('C', 7),
            ('C', 7),
        ],
    ),
];

/// Names of all built-in presets, in `37-<body>` form.
pub fn preset_names() -> Vec<String> {
    PRESETS_37.iter().map(|(n, _)| format!("37-{n}")).collect()
}

fn preset(body: &str) -> Option<Vec<LayerSpec>> {
    let (_, list) = PRESETS_37.iter().find(|(n, _)| *n == body)?;
    let relu_on_deconv = body == "3Deconv&6Conv";
    let mut layers: Vec<LayerSpec> = list
        .iter()
        .map(|&(t, k)| match t {
            'D' => LayerSpec {
                relu: relu_on_deconv,
                ..LayerSpec::deconv(k)
            },
            _ => LayerSpec::conv(k),
        })
        .collect();
    make_last_bare(&mut layers);
    Some(layers)
}

fn make_last_bare(layers: &mut [LayerSpec]) {
    if let Some(last) = layers.last_mut() {
        last.batch_norm = false;
        last.relu = false;
    }
}

/// Splits an optional patch size off `text`.
fn split_patch(text: &str) -> Result<(Option<usize>, &str)> {
    if let Some((body, p)) = text.rsplit_once('@') {
        let p = p
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("bad patch size `{p}` in `{text}`")))?;
        return Ok((Some(p), body.trim()));
    }
    if let Some((prefix, body)) = text.split_once('-') {
        if !prefix.is_empty() && prefix.bytes().all(|b| b.is_ascii_digit()) {
            let p = prefix
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad patch size in `{text}`")))?;
            return Ok((Some(p), body.trim()));
        }
    }
    Ok((None, text))
}

/// One parsed stage: layer kind, repetition count, optional kernel.
fn parse_stage(stage: &str) -> Result<(ConvKind, usize, Option<usize>)> {
    let digits = stage.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return Err(Error::Parse(format!("stage `{stage}` lacks a layer count")));
    }
    let count: usize = stage[..digits]
        .parse()
        .map_err(|_| Error::Parse(format!("bad layer count in `{stage}`")))?;
    if count == 0 {
        return Err(Error::Parse(format!("stage `{stage}` has zero layers")));
    }
    let rest = &stage[digits..];
    let (kind, rest) = if let Some(r) = rest.strip_prefix("Deconv") {
        (ConvKind::Deconv, r)
    } else if let Some(r) = rest.strip_prefix("Conv") {
        (ConvKind::Conv, r)
    } else {
        return Err(Error::Parse(format!(
            "stage `{stage}` must be `Conv` or `Deconv`"
        )));
    };
    let kernel = if rest.is_empty() {
        None
    } else {
        let inner = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| Error::Parse(format!("malformed kernel in `{stage}`")))?;
        let k: usize = inner
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad kernel size in `{stage}`")))?;
        if k == 0 {
            return Err(Error::Parse(format!("kernel size 0 in `{stage}`")));
        }
        Some(k)
    };
    Ok((kind, count, kernel))
}

/// Parses a config string or preset name.
pub fn parse_network_config(text: &str) -> Result<NetworkConfig> {
    let text = text.trim();
    let (patch, body) = split_patch(text)?;
    if body.is_empty() {
        return Err(Error::Parse("empty network config".into()));
    }

    if patch.unwrap_or(37) == 37 {
        if let Some(layers) = preset(body) {
            return Ok(NetworkConfig {
                name: format!("37-{body}"),
                patch_size: 37,
                layers,
            });
        }
    }

    let mut stages = Vec::new();
    for stage in body.split('&') {
        stages.push(parse_stage(stage.trim())?);
    }

    let missing: usize = stages
        .iter()
        .filter(|(_, _, k)| k.is_none())
        .map(|(_, n, _)| n)
        .sum();
    if stages
        .iter()
        .any(|(kind, _, k)| *kind == ConvKind::Deconv && k.is_none())
    {
        return Err(Error::Parse(format!(
            "`{body}`: transposed convolution stages need an explicit kernel"
        )));
    }

    let mut auto_kernels = Vec::new();
    if missing > 0 {
        let p = patch.ok_or_else(|| {
            Error::Parse(format!(
                "`{body}`: stages without kernels need a patch size (`@P` or `P-`)"
            ))
        })?;
        // net growth from explicit layers; remaining reduction goes to the rest
        let mut size = p as i64;
        for (kind, n, k) in &stages {
            if let Some(k) = k {
                let delta = (*n * (k - 1)) as i64;
                size += if *kind == ConvKind::Deconv { delta } else { -delta };
            }
        }
        let reduction = size - 1;
        if reduction < 0 {
            return Err(Error::Geometry(format!(
                "`{body}` at patch {p}: explicit layers already shrink below 1"
            )));
        }
        let (base, extra) = (reduction as usize / missing, reduction as usize % missing);
        auto_kernels = (0..missing)
            .map(|i| base + usize::from(i < extra) + 1)
            .collect();
    }

    let mut auto = auto_kernels.into_iter();
    let mut layers = Vec::new();
    for (kind, n, k) in stages {
        for _ in 0..n {
            let kernel = match k {
                Some(k) => k,
                None => auto.next().expect("one derived kernel per implicit layer"),
            };
            layers.push(match kind {
                ConvKind::Conv => LayerSpec::conv(kernel),
                ConvKind::Deconv => LayerSpec::deconv(kernel),
            });
        }
    }
    make_last_bare(&mut layers);

    let patch_size = match patch {
        Some(p) => p,
        None => invert_to_unit(&layers)?,
    };
    if patch_size == 0 {
        return Err(Error::Parse("patch size must be positive".into()));
    }
    Ok(NetworkConfig {
        name: text.to_string(),
        patch_size,
        layers,
    })
}

/// Input size that the stack maps to exactly 1.
fn invert_to_unit(layers: &[LayerSpec]) -> Result<usize> {
    let mut size: i64 = 1;
    for l in layers.iter().rev() {
        let k = l.kernel as i64;
        size = match l.kind {
            ConvKind::Conv => size + k - 1,
            ConvKind::Deconv => size - k + 1,
        };
        if size < 1 {
            return Err(Error::Geometry(
                "no input size reduces this stack to 1x1".into(),
            ));
        }
    }
    Ok(size as usize)
}
