use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use segment_auction::mechanisms::{run_session, SessionEnv};
use segment_auction::providers::{
    output_similarity, ChatMessage, ChatTransport, EmbeddingClient, EmbeddingConfig, EmbeddingRelevance,
    EmbeddingTransport, HttpChatTransport, HttpEmbeddingTransport, MockEmbeddingTransport, PromptTemplates,
    RecordedChatTransport, RemoteGenerator, RemoteGeneratorConfig, StaticRelevance,
};
use segment_auction::scenarios::scenario1;
use segment_auction::types::Mechanism;

/// Serves one HTTP request with `body`, returning the raw request it received.
fn serve_once(body: &'static str) -> (String, thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut content = vec![0; length];
        reader.read_exact(&mut content).unwrap();
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len())
            .unwrap();
        head + &String::from_utf8(content).unwrap()
    });
    (url, handle)
}

#[test]
fn embedding_wire_format() {
    std::env::set_var("SEGAUC_TEST_EMBED_KEY", "secret-1");
    let (url, server) = serve_once(r#"{"vectors": [[1.0, 0.0], [0.6, 0.8]]}"#);
    let mut config = EmbeddingConfig::new(url);
    config.model = Some("mini".into());
    config.api_key_env = Some("SEGAUC_TEST_EMBED_KEY".into());
    let transport = HttpEmbeddingTransport::new(&config).unwrap();
    let vectors = transport.embed(&["a".to_string(), "b".to_string()]).unwrap();
    assert_eq!(vectors, vec![vec![1.0, 0.0], vec![0.6, 0.8]]);
    let request = server.join().unwrap();
    assert!(request.starts_with("POST /v1 "));
    assert!(request.contains("Bearer secret-1"));
    let body: serde_json::Value = serde_json::from_str(&request[request.find('{').unwrap()..]).unwrap();
    assert_eq!(body, serde_json::json!({"texts": ["a", "b"], "model": "mini"}));
}

#[test]
fn chat_wire_format() {
    std::env::set_var("SEGAUC_TEST_CHAT_KEY", "secret-2");
    let (url, server) = serve_once(r#"{"choices": [{"message": {"role": "assistant", "content": "Hello."}}]}"#);
    let transport =
        HttpChatTransport::new(RemoteGeneratorConfig::new(url, "some-model", "SEGAUC_TEST_CHAT_KEY")).unwrap();
    assert_eq!(transport.complete(&[ChatMessage::user("hi")]).unwrap(), "Hello.");
    let request = server.join().unwrap();
    let body: serde_json::Value = serde_json::from_str(&request[request.find('{').unwrap()..]).unwrap();
    assert_eq!(body["model"], "some-model");
    assert_eq!(body["messages"][0]["content"], "hi");
    assert_eq!(body["temperature"], 1.0);
}

#[test]
fn embedding_relevance_drives_a_session() {
    let s = scenario1().with_segments(2, 1);
    let mut mock = MockEmbeddingTransport::new().with(s.query.clone(), vec![1.0, 0.0]);
    for (i, ad) in s.ads.iter().enumerate() {
        mock = mock.with(ad.document.clone(), vec![1.0, i as f64]);
    }
    let config = EmbeddingConfig::new("unused");
    let relevance = EmbeddingRelevance::new(EmbeddingClient::new(mock, &config));
    let generator = segment_auction::providers::StubGenerator;
    let env = SessionEnv::new(&relevance, &generator);
    let outcome = run_session(&s, &env, 0).unwrap();
    assert_eq!(outcome.counters.relevance_calls, 8);
    // query and four documents, each embedded once
    assert_eq!(relevance.client().network_requests(), 5);
    let expected: Vec<f64> = (0..4).map(|i| 1.0 / (1.0 + (i * i) as f64).sqrt()).collect();
    for seg in &outcome.segments {
        let w = seg.winners[0];
        assert!((seg.winner_relevance[0] - expected[w]).abs() < 1e-12);
    }
}

#[test]
fn remote_generator_fills_templates_per_segment() {
    let s = scenario1();
    let replies = ["First segment.", "Second segment.", "Third segment."];
    let generator = RemoteGenerator::new(RecordedChatTransport::new(replies), PromptTemplates::builtin());
    let relevance = StaticRelevance::new(s.static_q().unwrap().to_vec());
    let env = SessionEnv::new(&relevance, &generator).keep_text(true);
    let outcome = run_session(&s, &env, 3).unwrap();
    let prompts = generator.transport().prompts();
    assert_eq!(prompts.len(), 3);
    assert!(prompts[0].contains(&s.query));
    // later segments continue from the previous output
    assert!(prompts[1].contains("First segment."));
    assert!(prompts[2].contains("Second segment."));
    for (prompt, seg) in prompts.iter().zip(&outcome.segments) {
        assert!(prompt.contains(&s.ads[seg.winners[0]].document));
    }
    assert_eq!(outcome.segments[2].text.as_deref(), Some("Third segment."));
}

#[test]
fn multi_allocation_uses_the_multi_template() {
    let s = scenario1().for_mechanism(Mechanism::Multi);
    let generator = RemoteGenerator::new(RecordedChatTransport::new(["All three."]), PromptTemplates::builtin());
    let relevance = StaticRelevance::new(s.static_q().unwrap().to_vec());
    let env = SessionEnv::new(&relevance, &generator);
    let outcome = run_session(&s, &env, 0).unwrap();
    let prompt = &generator.transport().prompts()[0];
    for &w in &outcome.segments[0].winners {
        assert!(prompt.contains(&s.ads[w].document));
    }
}

#[test]
fn exhausted_service_aborts_the_session() {
    let s = scenario1();
    let generator = RemoteGenerator::new(RecordedChatTransport::new(["only one"]), PromptTemplates::builtin());
    let relevance = StaticRelevance::new(s.static_q().unwrap().to_vec());
    let env = SessionEnv::new(&relevance, &generator);
    assert!(run_session(&s, &env, 0).is_err());
}

#[test]
fn output_similarity_uses_the_cache() {
    let mock = MockEmbeddingTransport::new().with("original", vec![3.0, 4.0]).with("with ads", vec![4.0, 3.0]);
    let client = EmbeddingClient::new(mock, &EmbeddingConfig::new("unused"));
    let sim = output_similarity("original", "with ads", &client).unwrap();
    assert!((sim - 24.0 / 25.0).abs() < 1e-12);
    output_similarity("with ads", "original", &client).unwrap();
    assert_eq!(client.transport().calls(), 2);
}
