use std::fmt::Write as _;
use std::path::Path;

use super::FeatureError;

pub const USER_FIELD: &str = "user_id";
pub const ITEM_FIELD: &str = "item_id";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub vocab_size: usize,
    pub embedding_dim: usize,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, vocab_size: usize, embedding_dim: usize) -> Self {
        FieldSpec {
            name: name.into(),
            vocab_size,
            embedding_dim,
        }
    }
}

/// Ordered categorical fields plus sequence and stream bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSchema {
    pub fields: Vec<FieldSpec>,
    pub sequence_max_len: usize,
    pub num_periods: usize,
}

impl FeatureSchema {
    pub const NUM_DOMAINS: usize = 2;

    pub fn new(fields: Vec<FieldSpec>, sequence_max_len: usize, num_periods: usize) -> Result<Self, FeatureError> {
        let schema = FeatureSchema {
            fields,
            sequence_max_len,
            num_periods,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.fields {
            if f.vocab_size < 2 {
                return Err(FeatureError::Schema(format!("field `{}` needs vocab_size >= 2", f.name)));
            }
            if f.embedding_dim == 0 {
                return Err(FeatureError::Schema(format!("field `{}` needs embedding_dim >= 1", f.name)));
            }
            if f.name.is_empty() || f.name.contains([',', '=', ':', '|', '\n']) {
                return Err(FeatureError::Schema(format!("invalid field name `{}`", f.name)));
            }
            if f.name == "sequence_max_len" || f.name == "num_periods" {
                return Err(FeatureError::Schema(format!("reserved field name `{}`", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(FeatureError::Schema(format!("duplicate field `{}`", f.name)));
            }
        }
        for required in [USER_FIELD, ITEM_FIELD] {
            if !seen.contains(required) {
                return Err(FeatureError::Schema(format!("missing mandatory field `{required}`")));
            }
        }
        if self.num_periods == 0 {
            return Err(FeatureError::Schema("num_periods must be >= 1".into()));
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn user_vocab(&self) -> usize {
        self.field(USER_FIELD).map_or(0, |f| f.vocab_size)
    }

    pub fn item_field(&self) -> &FieldSpec {
        self.field(ITEM_FIELD).expect("validated schema has item_id")
    }

    /// Names of fields other than `user_id`/`item_id`, in declaration order. These are
    /// the `cats` columns of a record.
    pub fn extra_fields(&self) -> Vec<String> {
        self.fields
            .iter()
            .filter(|f| f.name != USER_FIELD && f.name != ITEM_FIELD)
            .map(|f| f.name.clone())
            .collect()
    }

    pub fn feat_dim(&self) -> usize {
        self.fields.iter().map(|f| f.embedding_dim).sum()
    }

    /// Whether every field of `self` appears in `other` with the same vocabulary.
    pub fn is_subset_of(&self, other: &FeatureSchema) -> bool {
        self.fields.iter().all(|f| {
            other
                .field(&f.name)
                .is_some_and(|o| o.vocab_size == f.vocab_size)
        })
    }

    /// Copy of this schema without the named fields.
    pub fn without(&self, names: &[String]) -> Result<FeatureSchema, FeatureError> {
        FeatureSchema::new(
            self.fields.iter().filter(|f| !names.contains(&f.name)).cloned().collect(),
            self.sequence_max_len,
            self.num_periods,
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.fields {
            let _ = writeln!(s, "{}={}:{}", f.name, f.vocab_size, f.embedding_dim);
        }
        let _ = writeln!(s, "sequence_max_len={}", self.sequence_max_len);
        let _ = writeln!(s, "num_periods={}", self.num_periods);
        s
    }

    pub fn parse(text: &str) -> Result<FeatureSchema, FeatureError> {
        let mut fields = Vec::new();
        let mut max_len = None;
        let mut periods = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || FeatureError::Parse {
                line: i + 1,
                message: format!("expected `name=vocab:dim`, got `{line}`"),
            };
            let (key, value) = line.split_once('=').ok_or_else(bad)?;
            let parse_count = |v: &str| {
                v.trim().parse::<usize>().map_err(|_| FeatureError::Parse {
                    line: i + 1,
                    message: format!("`{v}` is not a count"),
                })
            };
            match key.trim() {
                "sequence_max_len" => max_len = Some(parse_count(value)?),
                "num_periods" => periods = Some(parse_count(value)?),
                name => {
                    let (v, d) = value.split_once(':').ok_or_else(bad)?;
                    fields.push(FieldSpec::new(name, parse_count(v)?, parse_count(d)?));
                }
            }
        }
        let sequence_max_len = max_len.ok_or_else(|| FeatureError::Schema("missing sequence_max_len".into()))?;
        FeatureSchema::new(fields, sequence_max_len, periods.unwrap_or(1))
    }

    pub fn write_file(&self, path: &Path) -> Result<(), FeatureError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<FeatureSchema, FeatureError> {
        FeatureSchema::parse(&std::fs::read_to_string(path)?)
    }
}
