use serde_json::Value;

/// Field predicate over a document body. Field names may be dotted paths
/// (`"pose.x"`) into nested objects.
#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    All,
    Eq(String, Value),
    Ne(String, Value),
    /// Inclusive numeric range; either bound may be open.
    Range { field: String, min: Option<f64>, max: Option<f64> },
    And(Vec<Filter>),
}

impl Filter {
    pub fn eq(field: impl Into<String>, value: impl Into<Value>) -> Self {
        Filter::Eq(field.into(), value.into())
    }

    pub fn ne(field: impl Into<String>, value: impl Into<Value>) -> Self {
        Filter::Ne(field.into(), value.into())
    }

    pub fn range(field: impl Into<String>, min: Option<f64>, max: Option<f64>) -> Self {
        Filter::Range { field: field.into(), min, max }
    }

    pub fn and(self, other: Filter) -> Self {
        match self {
            Filter::All => other,
            Filter::And(mut parts) => {
                parts.push(other);
                Filter::And(parts)
            }
            first => Filter::And(vec![first, other]),
        }
    }

    pub fn matches(&self, body: &Value) -> bool {
        match self {
            Filter::All => true,
            Filter::Eq(field, value) => lookup(body, field) == Some(value),
            Filter::Ne(field, value) => lookup(body, field) != Some(value),
            Filter::Range { field, min, max } => match lookup(body, field).and_then(Value::as_f64) {
                Some(x) => min.is_none_or(|m| x >= m) && max.is_none_or(|m| x <= m),
                None => false,
            },
            Filter::And(parts) => parts.iter().all(|f| f.matches(body)),
        }
    }
}

fn lookup<'a>(body: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(body, |node, key| node.get(key))
}
