//! Text encoder (token embedding + width-k convolution) and label encoder
//! (mean of label-text embeddings, affine, ReLU).

use std::fs;
use std::path::Path;

use crate::corpus::{AttributeSchema, PAD};
use crate::diffcore::{
    affine, affine_backward, axpy, conv1d_seq, conv1d_seq_backward, embed_lookup,
    embed_lookup_backward, relu, relu_backward, Array2,
};
use crate::error::{Error, Result};

/// Borrowed view of the text encoder weights.
#[derive(Debug, Clone, Copy)]
pub struct TextEncoderParams<'a> {
    /// `V x d_h`
    pub embedding: &'a Array2,
    /// `d_h x (k * d_h)`
    pub filters: &'a Array2,
    pub bias: &'a [f64],
    pub kernel: usize,
    pub relu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatures {
    pub tokens: Vec<usize>,
    pub embedded: Array2,
    /// `T_final`, one row per convolution window.
    pub features: Array2,
    /// False for windows that touch a PAD token.
    pub valid: Vec<bool>,
}

impl TextFeatures {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

pub fn encode_text(tokens: &[usize], params: TextEncoderParams<'_>) -> Result<TextFeatures> {
    let k = params.kernel;
    let unpadded = tokens.iter().filter(|&&t| t != PAD).count();
    if unpadded < k {
        return Err(Error::SequenceTooShort {
            len: unpadded,
            kernel: k,
        });
    }
    let embedded = embed_lookup(params.embedding, tokens)?;
    let features = conv1d_seq(&embedded, params.filters, params.bias, k, params.relu)?;
    let valid: Vec<bool> = (0..features.rows())
        .map(|t| tokens[t..t + k].iter().all(|&id| id != PAD))
        .collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::SequenceTooShort {
            len: unpadded,
            kernel: k,
        });
    }
    Ok(TextFeatures {
        tokens: tokens.to_vec(),
        embedded,
        features,
        valid,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderGrads {
    pub filters: Array2,
    pub bias: Vec<f64>,
    /// Gradient per input position; scatter with the token ids.
    pub embedded: Array2,
}

impl TextEncoderGrads {
    pub fn scatter_embedding(&self, tokens: &[usize], grad_table: &mut Array2) {
        embed_lookup_backward(grad_table, tokens, &self.embedded);
        if PAD < grad_table.rows() {
            grad_table.row_mut(PAD).fill(0.0);
        }
    }
}

pub fn encode_text_backward(
    feats: &TextFeatures,
    params: TextEncoderParams<'_>,
    d_features: &Array2,
) -> TextEncoderGrads {
    let mut filters = Array2::zeros(params.filters.rows(), params.filters.cols());
    let mut bias = vec![0.0; params.bias.len()];
    let embedded = conv1d_seq_backward(
        &feats.embedded,
        params.filters,
        &feats.features,
        params.kernel,
        params.relu,
        d_features,
        &mut filters,
        &mut bias,
    );
    TextEncoderGrads {
        filters,
        bias,
        embedded,
    }
}

/// Borrowed view of the label encoder weights.
#[derive(Debug, Clone, Copy)]
pub struct LabelEncoderParams<'a> {
    /// `V x d_l`
    pub embedding: &'a Array2,
    /// Optional `N x d_l` per-label rows added to the mean token embedding.
    pub label_table: Option<&'a Array2>,
    /// `d_l x d_l`
    pub proj_w: &'a Array2,
    pub proj_b: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFeatures {
    pub token_lists: Vec<Vec<usize>>,
    /// Mean token embedding per label.
    pub mean_embedding: Array2,
    /// `H_L`, `N x d_l`, rows ordered by label id.
    pub h_l: Array2,
}

pub fn encode_labels(schema: &AttributeSchema, params: LabelEncoderParams<'_>) -> Result<LabelFeatures> {
    let n = schema.n_labels();
    let d = params.embedding.cols();
    if params.proj_w.shape() != (d, d) || params.proj_b.len() != d {
        return Err(Error::Shape(format!(
            "label projection must be {d}x{d} with {d} biases"
        )));
    }
    if let Some(t) = params.label_table {
        if t.shape() != (n, d) {
            return Err(Error::Shape(format!(
                "label table is {:?}, expected {n}x{d}",
                t.shape()
            )));
        }
    }
    let mut mean_embedding = Array2::zeros(n, d);
    let mut h_l = Array2::zeros(n, d);
    let mut token_lists = Vec::with_capacity(n);
    for j in 0..n {
        let toks = schema.label_text_tokens(j);
        let rows = embed_lookup(params.embedding, &toks)?;
        let inv = 1.0 / toks.len() as f64;
        let m = mean_embedding.row_mut(j);
        for r in 0..rows.rows() {
            axpy(m, rows.row(r), inv);
        }
        if let Some(table) = params.label_table {
            axpy(m, table.row(j), 1.0);
        }
        let out = relu(&affine(mean_embedding.row(j), params.proj_w, params.proj_b));
        h_l.row_mut(j).copy_from_slice(&out);
        token_lists.push(toks);
    }
    Ok(LabelFeatures {
        token_lists,
        mean_embedding,
        h_l,
    })
}

/// Accumulates label-encoder gradients given `d_h_l`.
pub fn encode_labels_backward(
    feats: &LabelFeatures,
    params: LabelEncoderParams<'_>,
    d_h_l: &Array2,
    grad_embedding: &mut Array2,
    mut grad_table: Option<&mut Array2>,
    grad_proj_w: &mut Array2,
    grad_proj_b: &mut [f64],
) {
    for (j, toks) in feats.token_lists.iter().enumerate() {
        let dy = relu_backward(feats.h_l.row(j), d_h_l.row(j));
        if dy.iter().all(|&g| g == 0.0) {
            continue;
        }
        let dm = affine_backward(
            feats.mean_embedding.row(j),
            params.proj_w,
            &dy,
            grad_proj_w,
            grad_proj_b,
        );
        if let Some(g) = grad_table.as_deref_mut() {
            axpy(g.row_mut(j), &dm, 1.0);
        }
        let inv = 1.0 / toks.len() as f64;
        for &t in toks {
            axpy(grad_embedding.row_mut(t), &dm, inv);
        }
    }
    if PAD < grad_embedding.rows() {
        grad_embedding.row_mut(PAD).fill(0.0);
    }
}

/// Magic bytes of a label-embedding table file.
pub const LABEL_TABLE_MAGIC: &[u8; 8] = b"AVEXLEMB";
const LABEL_TABLE_VERSION: u32 = 1;

/// Writes an `N x d` table: magic, version (u32), rows and cols (u64), then
/// row-major little-endian `f64` values.
pub fn write_label_table(path: impl AsRef<Path>, table: &Array2) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(28 + 8 * table.as_slice().len());
    buf.extend_from_slice(LABEL_TABLE_MAGIC);
    buf.extend_from_slice(&LABEL_TABLE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(table.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(table.cols() as u64).to_le_bytes());
    for v in table.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_label_table(path: impl AsRef<Path>) -> Result<Array2> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Config(format!("{}: {m}", path.display()));
    if bytes.len() < 28 || &bytes[..8] != LABEL_TABLE_MAGIC {
        return Err(bad("not a label table file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != LABEL_TABLE_VERSION {
        return Err(bad(&format!("unsupported label table version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    let body = &bytes[28..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad(&format!(
            "header says {rows}x{cols} but {} payload bytes follow",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Array2::from_vec(rows, cols, data)
}
