use std::convert::Infallible;

use axum::extract::{Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;

use super::AppState;
use crate::workflow::enum_str;

#[derive(Debug, Default, Deserialize)]
pub(super) struct StreamQuery {
    since: Option<u64>,
}

/// Server-sent audit events: replays from `since` (or just past
/// `Last-Event-ID` on reconnect), then follows the log live. Each event's
/// SSE id is its sequence number and its SSE type is the event kind.
pub(super) async fn stream(
    State(app): State<AppState>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(|seq| seq + 1);
    let start = resume.or(q.since).unwrap_or(0);
    let rx = app.fleet.store().subscribe();

    let batches = stream::unfold((app, rx, start), |(app, mut rx, next)| async move {
        loop {
            // mark the current length seen before reading so no commit slips
            // between the read and the wait
            rx.borrow_and_update();
            let batch = app.fleet.store().read_audit(next);
            if !batch.is_empty() {
                let after = next + batch.len() as u64;
                return Some((batch, (app, rx, after)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    let events = batches.flat_map(|batch| {
        stream::iter(batch.into_iter().map(|ev| {
            let event = Event::default().id(ev.seq.to_string()).event(enum_str(&ev.kind));
            Ok(event.json_data(&ev).unwrap_or_else(|_| Event::default().comment("unencodable event")))
        }))
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}
