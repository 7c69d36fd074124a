use agm::clock::sim_time;
use agm::domain::{AuditKind, NewAuditEvent};
use agm::store::{Filter, Store, StoreError};
use proptest::prelude::*;
use serde_json::{json, Value};

const COLLS: &[&str] = &["a", "b"];

#[derive(Debug, Clone)]
enum Op {
    Put { coll: usize, id: u8, n: i64, expected: Option<u64>, events: u8 },
    Delete { coll: usize, id: u8, expected: Option<u64> },
    Audit(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..2usize, 0..6u8, any::<i64>(), proptest::option::of(0..4u64), 0..3u8)
            .prop_map(|(coll, id, n, expected, events)| Op::Put { coll, id, n, expected, events }),
        1 => (0..2usize, 0..6u8, proptest::option::of(0..4u64)).prop_map(|(coll, id, expected)| Op::Delete { coll, id, expected }),
        1 => (0..3u8).prop_map(Op::Audit),
    ]
}

fn outcome(r: Result<Value, StoreError>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(StoreError::VersionConflict { .. }) => "conflict".into(),
        Err(StoreError::AlreadyExists { .. }) => "exists".into(),
        Err(StoreError::NotFound { .. }) => "missing".into(),
        Err(e) => format!("error: {e}"),
    }
}

fn apply(store: &Store, op: &Op, step: usize) -> String {
    let events = |n: u8| {
        (0..n)
            .map(|k| NewAuditEvent::new(AuditKind::WorkerActivity, format!("s{step}"), sim_time(step as f64), json!({"k": k})))
            .collect::<Vec<_>>()
    };
    match op {
        Op::Put { coll, id, n, expected, events: e } => outcome(
            store
                .put_logged(COLLS[*coll], &format!("d{id}"), json!({"n": n, "tag": format!("t{}", n % 3)}), *expected, events(*e))
                .map(|v| json!(v)),
        ),
        Op::Delete { coll, id, expected } => {
            outcome(store.delete(COLLS[*coll], &format!("d{id}"), *expected).map(|_| Value::Null))
        }
        Op::Audit(n) => outcome(events(*n).into_iter().map(|e| store.append_audit(e).map(|s| json!(s))).last().unwrap_or(Ok(Value::Null))),
    }
}

fn snapshot(store: &Store) -> Value {
    let mut out = serde_json::Map::new();
    for c in COLLS {
        let docs: Vec<Value> = store
            .query(c, &Filter::All)
            .unwrap()
            .into_iter()
            .map(|d| json!([d.id, d.version, d.body]))
            .collect();
        out.insert(c.to_string(), Value::Array(docs));
        let tagged = store.query(c, &Filter::eq("tag", "t1")).unwrap().len();
        out.insert(format!("{c}-t1"), json!(tagged));
    }
    out.insert("audit".into(), serde_json::to_value(store.read_audit(0)).unwrap());
    Value::Object(out)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_backend_matches_memory_backend(ops in proptest::collection::vec(op(), 1..120)) {
        let dir = tempfile::tempdir().unwrap();
        let mem = Store::in_memory(COLLS);
        let file = Store::open(dir.path(), COLLS).unwrap();
        for (step, op) in ops.iter().enumerate() {
            prop_assert_eq!(apply(&mem, op, step), apply(&file, op, step), "op {} {:?}", step, op);
        }
        let expected = snapshot(&mem);
        prop_assert_eq!(&snapshot(&file), &expected);
        drop(file);
        let reopened = Store::open(dir.path(), COLLS).unwrap();
        prop_assert_eq!(&snapshot(&reopened), &expected);
        reopened.compact().unwrap();
        drop(reopened);
        prop_assert_eq!(&snapshot(&Store::open(dir.path(), COLLS).unwrap()), &expected);
    }
}
