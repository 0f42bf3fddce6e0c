//! On-disk dataset layout: `schema.json` plus one JSONL file per split.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Attribute, AttributeSchema, Dataset, Label, Product, Split, Vocab};
use crate::error::{Error, Result};

const SCHEMA_FILE: &str = "schema.json";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    vocab: Vec<String>,
    attributes: Vec<AttributeRecord>,
    labels: Vec<LabelRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeRecord {
    attr_id: usize,
    name: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecord {
    label_id: usize,
    attr_id: usize,
    value: Vec<String>,
}

#[derive(Serialize)]
struct ProductRecord<'a> {
    id: u64,
    tokens: Vec<&'a str>,
    labels: &'a [usize],
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let vocab = &ds.vocab;
    let names = |ids: &[usize]| ids.iter().map(|&i| vocab.token(i).to_string()).collect();
    let schema = SchemaFile {
        vocab: vocab.tokens().to_vec(),
        attributes: ds
            .schema
            .attributes()
            .iter()
            .map(|a| AttributeRecord {
                attr_id: a.attr_id,
                name: names(&a.name_tokens),
            })
            .collect(),
        labels: ds
            .schema
            .labels()
            .iter()
            .map(|l| LabelRecord {
                label_id: l.label_id,
                attr_id: l.attr_id,
                value: names(&l.value_tokens),
            })
            .collect(),
    };
    let path = dir.join(SCHEMA_FILE);
    let mut text = serde_json::to_string_pretty(&schema)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    for split in Split::ALL {
        let path = dir.join(format!("{split}.jsonl"));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for p in ds.split(split) {
            let rec = ProductRecord {
                id: p.product_id,
                tokens: p.tokens.iter().map(|&t| vocab.token(t)).collect(),
                labels: &p.gold_labels,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(SCHEMA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: SchemaFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        line: e.line(),
        field: "schema".into(),
        message: e.to_string(),
    })?;
    let vocab = Vocab::from_tokens(file.vocab)?;
    let ids = |toks: &[String], what: &str| -> Result<Vec<usize>> {
        toks.iter()
            .map(|t| {
                vocab
                    .id(t)
                    .ok_or_else(|| Error::Schema(format!("{what} token `{t}` not in vocab")))
            })
            .collect()
    };
    let attributes = file
        .attributes
        .iter()
        .map(|a| {
            Ok(Attribute {
                attr_id: a.attr_id,
                name_tokens: ids(&a.name, "attribute name")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = file
        .labels
        .iter()
        .map(|l| {
            Ok(Label {
                label_id: l.label_id,
                attr_id: l.attr_id,
                value_tokens: ids(&l.value, "label value")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let schema = AttributeSchema::new(attributes, labels)?;

    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        splits.push(load_split(&dir.join(format!("{split}.jsonl")), &schema, &vocab)?);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    let ds = Dataset {
        schema,
        vocab,
        train,
        val,
        test,
    };
    ds.validate()?;
    Ok(ds)
}

fn load_split(path: &Path, schema: &AttributeSchema, vocab: &Vocab) -> Result<Vec<Product>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let fname = path.display().to_string();
    let mut out = Vec::new();
    let mut unmatched = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p = parse_product(&line, i + 1, &fname, schema, vocab)?;
        if !p.contains_gold_values(schema) {
            unmatched += 1;
        }
        out.push(p);
    }
    if unmatched > 0 {
        log::warn!("{fname}: {unmatched} products have gold values missing from their text");
    }
    Ok(out)
}

fn parse_product(
    line: &str,
    lineno: usize,
    fname: &str,
    schema: &AttributeSchema,
    vocab: &Vocab,
) -> Result<Product> {
    let err = |field: &str, message: String| Error::Parse {
        file: fname.to_string(),
        line: lineno,
        field: field.to_string(),
        message,
    };
    let v: Value = serde_json::from_str(line).map_err(|e| err("<record>", e.to_string()))?;
    let obj = v
        .as_object()
        .ok_or_else(|| err("<record>", "expected a JSON object".into()))?;
    let field = |name: &str| {
        obj.get(name)
            .ok_or_else(|| err(name, "missing field".into()))
    };

    let product_id = field("id")?
        .as_u64()
        .ok_or_else(|| err("id", "expected a non-negative integer".into()))?;

    let tokens = field("tokens")?
        .as_array()
        .ok_or_else(|| err("tokens", "expected an array of strings".into()))?
        .iter()
        .map(|t| {
            t.as_str()
                .map(|s| vocab.id_or_unk(s))
                .ok_or_else(|| err("tokens", "expected an array of strings".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gold = field("labels")?
        .as_array()
        .ok_or_else(|| err("labels", "expected an array of label ids".into()))?
        .iter()
        .map(|l| {
            l.as_u64()
                .map(|x| x as usize)
                .ok_or_else(|| err("labels", "expected an array of label ids".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    if gold.is_empty() {
        return Err(err("labels", "a product needs at least one label".into()));
    }
    gold.sort_unstable();
    if gold.windows(2).any(|w| w[0] == w[1]) {
        return Err(err("labels", "duplicate label id".into()));
    }
    let n = schema.n_labels();
    if let Some(&bad) = gold.iter().find(|&&g| g >= n) {
        return Err(Error::UnknownLabel {
            file: fname.to_string(),
            line: lineno,
            product_id,
            label_id: bad,
            n_labels: n,
        });
    }
    Ok(Product {
        product_id,
        tokens,
        gold_labels: gold,
    })
}
