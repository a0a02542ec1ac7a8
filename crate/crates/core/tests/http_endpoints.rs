#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use curator::corpus::Triplet;
use curator::indicators::http::{HttpRatingClient, HttpRewardClient};
use curator::indicators::{gpt_score, reward_score, PromptTemplate, RatingEndpoint, RewardEndpoint};
use curator::Error;

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection, in order, and
/// records what each request carried.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(serde_json::Value::Null),
            });
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn triplet() -> Triplet {
    Triplet {
        id: "a1".into(),
        image_ref: "img/a1.jpg".into(),
        instruction: "Describe this image in detail.".into(),
        response: "A dog on a beach.".into(),
    }
}

const T: Duration = Duration::from_secs(5);

#[test]
fn rating_client_posts_both_messages_with_bearer_key() {
    let (url, seen) = stub(vec![(200, r#"{"content":"88\nVivid."}"#.into())]);
    let client = HttpRatingClient::new(url, Some("k123".into()), T);
    assert_eq!(client.rate("sys", "usr").unwrap(), "88\nVivid.");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer k123"));
    assert_eq!(seen[0].body["system"], "sys");
    assert_eq!(seen[0].body["user"], "usr");
}

#[test]
fn reward_client_sends_instruction_as_question() {
    let (url, seen) = stub(vec![(200, r#"{"score":-1.25}"#.into())]);
    let client = HttpRewardClient::new(url, None, T);
    assert_eq!(reward_score(&client, &triplet(), 0).unwrap(), -1.25);
    let seen = seen.lock().unwrap();
    assert!(seen[0].auth.is_none());
    assert_eq!(seen[0].body["question"], "Describe this image in detail.");
    assert_eq!(seen[0].body["answer"], "A dog on a beach.");
}

#[test]
fn gpt_score_retries_past_bad_replies() {
    let (url, seen) = stub(vec![
        (500, r#"{"error":"busy"}"#.into()),
        (200, r#"{"content":"great caption"}"#.into()),
        (200, r#"{"content":"77\nSolid detail."}"#.into()),
    ]);
    let client = HttpRatingClient::new(url, None, T);
    let score = gpt_score(&client, &PromptTemplate::default(), &triplet(), 2).unwrap();
    assert_eq!(score, 77.0);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let system = seen[2].body["system"].as_str().unwrap();
    assert!(system.ends_with("Caption: A dog on a beach."));
}

#[test]
fn exhausted_retries_report_attempt_count() {
    let (url, _) = stub(vec![(200, r#"{"content":"140"}"#.into()), (200, r#"{"content":"140"}"#.into())]);
    let client = HttpRatingClient::new(url, None, T);
    match gpt_score(&client, &PromptTemplate::default(), &triplet(), 1) {
        Err(Error::ScoringFailed { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected ScoringFailed, got {other:?}"),
    }
}

#[test]
fn malformed_reward_body_is_a_transport_error() {
    let (url, _) = stub(vec![(200, r#"{"value":3}"#.into())]);
    let client = HttpRewardClient::new(url, None, T);
    assert!(client.reward("q", "a").is_err());
}
