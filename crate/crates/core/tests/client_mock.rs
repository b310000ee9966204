//! EDGAR client behavior against the bundled mock archive.

use std::sync::Arc;
use std::time::Duration;

use edgar_corpus::clock::{Clock, SimClock};
use edgar_corpus::edgar_client::{ByteRange, ClientConfig, ClientError, EdgarClient};
use edgar_corpus_testkit::{archive_fixture_root, company_fixture_root, EdgarMock};

const MASTER_PATH: &str = "edgar/full-index/2018/QTR1/master.idx";

fn mock() -> EdgarMock {
    EdgarMock::start(&archive_fixture_root(), &company_fixture_root()).unwrap()
}

fn client_for(mock: &EdgarMock) -> (Arc<SimClock>, EdgarClient) {
    let clock = Arc::new(SimClock::at_2018());
    let mut config = ClientConfig::new(mock.base_url(), "corpus tests test@example.com");
    config.company_metadata_url = mock.company_metadata_url();
    config.backoff_base = Duration::from_millis(10);
    (clock.clone(), EdgarClient::new(config, clock).unwrap())
}

#[test]
fn fetch_returns_fixture_bytes_verbatim() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    let fetched = client.fetch(MASTER_PATH, None).unwrap();
    let on_disk = std::fs::read(archive_fixture_root().join(MASTER_PATH)).unwrap();
    assert_eq!(fetched, on_disk);
}

#[test]
fn ranged_fetch_equals_slice_of_whole() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    let whole = client.fetch(MASTER_PATH, None).unwrap();
    let ranged = client
        .fetch(MASTER_PATH, Some(ByteRange::new(10, 20)))
        .unwrap();
    assert_eq!(ranged, &whole[10..20]);
    // range reaching past end of file returns the tail
    let tail = client
        .fetch(
            MASTER_PATH,
            Some(ByteRange::new(whole.len() as u64 - 5, whole.len() as u64 + 100)),
        )
        .unwrap();
    assert_eq!(tail, &whole[whole.len() - 5..]);
}

#[test]
fn missing_resource_is_not_found_without_retries() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    let before = mock.requests_served();
    let err = client.fetch("edgar/data/0/nothing.txt", None).unwrap_err();
    assert_eq!(err, ClientError::NotFound);
    // terminal 404: exactly one request
    assert_eq!(mock.requests_served() - before, 1);
}

#[test]
fn permanent_server_errors_exhaust_retries() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    mock.set_faults(|f| f.error_next = 100);
    let before = mock.requests_served();
    let err = client.fetch(MASTER_PATH, None).unwrap_err();
    assert!(matches!(err, ClientError::Transport(_)));
    // max_retries = 4 means exactly 5 attempts
    assert_eq!(mock.requests_served() - before, 5);
}

#[test]
fn throttle_page_is_retried_then_reported_as_rate_limited() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    mock.set_faults(|f| f.throttle_next = 100);
    let err = client.fetch(MASTER_PATH, None).unwrap_err();
    assert_eq!(err, ClientError::RateLimited);

    // a burst shorter than the retry budget recovers transparently
    mock.clear_faults();
    mock.set_faults(|f| f.throttle_next = 2);
    let bytes = client.fetch(MASTER_PATH, None).unwrap();
    assert!(!bytes.is_empty());
}

#[test]
fn company_metadata_fetch_and_errors() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    let bytes = client.fetch_company_metadata(320193).unwrap();
    let on_disk = std::fs::read(company_fixture_root().join("v1/320193.xml")).unwrap();
    assert_eq!(bytes, on_disk);
    assert!(String::from_utf8_lossy(&bytes).contains("APPLE INC"));

    assert_eq!(
        client.fetch_company_metadata(999999999).unwrap_err(),
        ClientError::NotFound
    );

    // metadata version switch serves the changed fixture set
    mock.set_faults(|f| f.metadata_version = 2);
    let v2 = client.fetch_company_metadata(320193).unwrap();
    assert!(String::from_utf8_lossy(&v2).contains("Apple Inc."));
}

#[test]
fn truncated_responses_are_shorter_but_not_errors() {
    let mock = mock();
    let (_clock, client) = client_for(&mock);
    let whole = client.fetch(MASTER_PATH, None).unwrap();
    mock.set_faults(|f| f.truncate_next = 1);
    let truncated = client.fetch(MASTER_PATH, None).unwrap();
    assert_eq!(truncated.len(), whole.len() / 2);
    assert_eq!(truncated, &whole[..whole.len() / 2]);
}

#[test]
fn rate_limit_holds_under_concurrent_fetches() {
    let mock = mock();
    let clock = Arc::new(SimClock::at_2018());
    let mut config = ClientConfig::new(mock.base_url(), "corpus tests test@example.com");
    config.max_requests_per_second = 50.0; // keep the test quick but paced
    let client = Arc::new(EdgarClient::new(config, clock.clone()).unwrap());

    std::thread::scope(|scope| {
        for _ in 0..4 {
            let client = client.clone();
            scope.spawn(move || {
                for _ in 0..10 {
                    client.fetch(MASTER_PATH, None).unwrap();
                }
            });
        }
    });
    // 40 requests at 50/s need at least 39 * 20ms of simulated time
    assert!(clock.now() >= Duration::from_millis(39 * 20));
    assert_eq!(mock.requests_served(), 40);
}
