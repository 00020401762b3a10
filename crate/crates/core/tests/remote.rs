use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use corl::experts::{remote_query, ExpertError, ExpertPool, ExpertQuery, MixedPool, PoolMember, RemoteEndpoint, API_KEY_ENV};
use corl::QueryQuality;
use rand::SeedableRng;

/// Serves one canned reply per connection and forwards each raw request.
fn stub(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut payload = vec![0; len];
            reader.read_exact(&mut payload).unwrap();
            let _ = tx.send(head + &String::from_utf8(payload).unwrap());
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn completion(content: &str, prompt: u32, completion: u32) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt, "completion_tokens": completion}
    })
    .to_string()
}

// One test so the credential variable is never read while another test changes it.
#[test]
fn remote_adapter_against_stub_server() {
    std::env::remove_var(API_KEY_ENV);
    let (url, _) = stub(vec![]);
    let ep = RemoteEndpoint::new(url, "m");
    assert!(matches!(remote_query(&ep, "q"), Err(ExpertError::MissingCredential(_))));

    std::env::set_var(API_KEY_ENV, "sk-test");
    let (url, requests) = stub(vec![
        (200, completion("the answer is 7", 10, 20)),
        (500, "{}".into()),
        (200, completion("no digits here", 1, 1)),
        (200, r#"{"choices": [{"message": {"content": "3"}}]}"#.into()),
    ]);
    let ep = RemoteEndpoint { answer_vocab: 16, ..RemoteEndpoint::new(url, "stub-model") };

    let r = remote_query(&ep, "solve").unwrap();
    assert_eq!((r.input_tokens, r.output_tokens, r.proposed_answer), (10, 20, 7));
    let req = requests.recv().unwrap();
    assert!(req.contains("Bearer sk-test"));
    assert!(req.contains("\"stub-model\""));
    assert!(req.contains("solve"));

    assert!(matches!(remote_query(&ep, "q"), Err(ExpertError::Status(500))));
    assert!(matches!(remote_query(&ep, "q"), Err(ExpertError::UnparseableAnswer { .. })));
    assert!(matches!(remote_query(&ep, "q"), Err(ExpertError::MissingUsage("prompt_tokens"))));

    let (url, _) = stub(vec![(503, "{}".into()), (200, completion("answer: 4", 30, 5))]);
    let pool = MixedPool {
        members: vec![PoolMember::Remote(RemoteEndpoint { retries: 1, ..RemoteEndpoint::new(url, "m") })],
    };
    let query = ExpertQuery {
        task_id: 1,
        quality: QueryQuality::Refined,
        query_tokens: 120,
        difficulty: 0.5,
        truth: 4,
        answer_vocab: 16,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let r = pool.query(0, &query, &mut rng).unwrap();
    assert_eq!((r.expert_index, r.proposed_answer, r.input_tokens, r.output_tokens), (0, 4, 30, 5));
}
