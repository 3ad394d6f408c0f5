use super::schema::{FeatureSchema, ITEM_FIELD, USER_FIELD};
use super::FeatureError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn code(self) -> &'static str {
        match self {
            Domain::Source => "S",
            Domain::Target => "T",
        }
    }

    pub fn from_code(s: &str) -> Option<Domain> {
        match s {
            "S" => Some(Domain::Source),
            "T" => Some(Domain::Target),
            _ => None,
        }
    }
}

/// One impression. `cats` holds ids for the dataset schema's non-id fields in
/// declaration order; `seq` is most-recent-last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub domain: Domain,
    pub period: u32,
    pub user_id: u32,
    pub item_id: u32,
    pub cats: Vec<u32>,
    pub seq: Vec<u32>,
    pub label: u8,
}

/// Where a field's id lives inside a [`Record`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldRef {
    User,
    Item,
    Extra(usize),
}

impl Record {
    #[inline]
    pub fn id(&self, field: FieldRef) -> u32 {
        match field {
            FieldRef::User => self.user_id,
            FieldRef::Item => self.item_id,
            FieldRef::Extra(k) => self.cats[k],
        }
    }

    /// Checks every id against the dataset schema the record was produced under.
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), FeatureError> {
        let layout = RecordLayout::from_schema(schema);
        if self.cats.len() != layout.extra.len() {
            return Err(FeatureError::Invalid(format!(
                "record has {} categorical ids, schema expects {}",
                self.cats.len(),
                layout.extra.len()
            )));
        }
        for f in &schema.fields {
            let id = self.id(layout.resolve(&f.name).expect("schema field resolves"));
            if id as usize >= f.vocab_size {
                return Err(FeatureError::Invalid(format!(
                    "{} id {id} out of range (vocab {})",
                    f.name, f.vocab_size
                )));
            }
        }
        let items = schema.item_field().vocab_size;
        if let Some(bad) = self.seq.iter().find(|&&j| j as usize >= items) {
            return Err(FeatureError::Invalid(format!("sequence item {bad} out of range (vocab {items})")));
        }
        if self.seq.len() > schema.sequence_max_len {
            return Err(FeatureError::Invalid(format!(
                "sequence length {} exceeds {}",
                self.seq.len(),
                schema.sequence_max_len
            )));
        }
        if self.label > 1 {
            return Err(FeatureError::Invalid(format!("label {} is not 0/1", self.label)));
        }
        if self.period as usize >= schema.num_periods {
            return Err(FeatureError::Invalid(format!(
                "period {} outside [0, {})",
                self.period, schema.num_periods
            )));
        }
        Ok(())
    }
}

/// Column layout of records for a given dataset schema.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordLayout {
    pub extra: Vec<String>,
}

impl RecordLayout {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        RecordLayout {
            extra: schema.extra_fields(),
        }
    }

    pub fn resolve(&self, field: &str) -> Option<FieldRef> {
        match field {
            USER_FIELD => Some(FieldRef::User),
            ITEM_FIELD => Some(FieldRef::Item),
            other => self.extra.iter().position(|n| n == other).map(FieldRef::Extra),
        }
    }
}
