//! The chat client against a throwaway local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use repro_mcts::env::{ActionCommand, Observation, Orientation, Widget};
use repro_mcts::oracle::{
    ChatClient, ExpandRequest, Expander, LlmOracle, OracleError, PromptBundle, RemoteChatClient, RemoteConfig,
    SimulateRequest, Simulator,
};
use repro_mcts::AblationFlags;
use serde_json::{json, Value};

struct Captured {
    auth: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = Some(line["authorization:".len()..].trim().to_string());
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured { auth, body: serde_json::from_slice(&buf).unwrap_or(Value::Null) });
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn reply(text: &str) -> (u16, String) {
    let body = json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 100, "completion_tokens": 7, "total_tokens": 107}
    });
    (200, body.to_string())
}

fn client(url: &str) -> RemoteChatClient {
    let config = RemoteConfig { endpoint: url.into(), model: "test-model".into(), ..RemoteConfig::default() };
    RemoteChatClient::new(config, "secret-token").unwrap()
}

fn bundle() -> PromptBundle {
    PromptBundle {
        system_text: "You help reproduce crashes.".into(),
        fewshot_blocks: vec![],
        cot_block: String::new(),
        user_text: "report".into(),
        attachments: vec![b"\x89PNG".to_vec()],
        repair_text: "Answer with Score: N.".into(),
    }
}

#[test]
fn wire_format_and_usage() {
    let (url, seen) = serve(vec![reply("Score: 7")]);
    let c = client(&url);
    assert_eq!(c.complete(&bundle()).unwrap(), "Score: 7");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer secret-token"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], json!(0.2));
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,iVBORw==");
    let u = c.usage();
    assert_eq!((u.requests, u.total_tokens), (1, 107));
}

#[test]
fn status_codes_map_to_error_kinds() {
    let (url, _) = serve(vec![(401, "{}".into()), (500, "{\"error\": \"boom\"}".into()), (200, "not json".into())]);
    let c = client(&url);
    assert!(matches!(c.complete(&bundle()), Err(OracleError::Auth(_))));
    assert!(matches!(c.complete(&bundle()), Err(OracleError::Transport(m)) if m.contains("500")));
    assert!(matches!(c.complete(&bundle()), Err(OracleError::Transport(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(&format!("http://127.0.0.1:{port}/"));
    assert!(matches!(c.complete(&bundle()), Err(OracleError::Transport(_))));
}

fn screen() -> Observation {
    Observation {
        activity: "Main".into(),
        widgets: vec![Widget::new("escape_methods", "Escape methods", "button")],
        orientation: Orientation::Portrait,
        dialog_open: false,
        crash: false,
        attachment: Some(b"img".to_vec()),
    }
}

#[test]
fn llm_oracle_retries_over_http() {
    let (url, seen) = serve(vec![
        reply("Let me think about it."),
        reply(r#"Try these: [{"action": "click", "feature": "Escape methods"}, {"action": "rotate", "feature": ""}]"#),
        reply("The dialog is open now. Score: 9"),
    ]);
    let oracle = LlmOracle::new(client(&url));
    let obs = screen();
    let req = ExpandRequest {
        report: "rotate with dialog open",
        app_name: "FakeStandby",
        observation: &obs,
        history: &[],
        k: Some(3),
        flags: AblationFlags { disable_image: true, ..AblationFlags::default() },
    };
    let proposals = oracle.propose(&req).unwrap();
    assert_eq!(proposals.len(), 2);
    let action = ActionCommand::click("escape_methods");
    let sim = SimulateRequest {
        report: "rotate with dialog open",
        history: &[],
        target: &action,
        before: &obs,
        after: &obs,
        flags: AblationFlags::default(),
    };
    assert_eq!(oracle.score(&sim).unwrap().raw(), 9);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    // image withheld under the ablation: plain string content, no parts
    assert!(seen[0].body["messages"][1]["content"].is_string());
    assert!(seen[1].body["messages"][1]["content"].as_str().unwrap().len() > seen[0].body["messages"][1]["content"].as_str().unwrap().len());
    assert!(seen[2].body["messages"][1]["content"].is_array());
}
