use std::net::{SocketAddr, TcpListener as StdListener};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use acat_cli::serve::{start, ServeConfig, ServeError, ServerHandle};
use acat_cli::Speed;
use acat_core::gateway::Snapshot;
use acat_core::{EventLog, Scenario, Terminal};
use futures::{SinkExt, StreamExt};
use serde_json::Value;
use tokio::net::TcpStream;
use tokio::time::timeout;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(20);

fn local() -> SocketAddr {
    "127.0.0.1:0".parse().unwrap()
}

fn manual_start() -> Scenario {
    Scenario { autostart: false, ..Scenario::default() }
}

async fn connect(handle: &ServerHandle) -> Ws {
    connect_async(handle.ws_url()).await.expect("connect").0
}

async fn next_json(ws: &mut Ws) -> Value {
    loop {
        let msg = timeout(WAIT, ws.next()).await.expect("message in time").expect("open").expect("frame");
        if let Message::Text(text) = msg {
            return serde_json::from_str(text.as_str()).unwrap();
        }
    }
}

async fn next_of_type(ws: &mut Ws, kind: &str) -> Value {
    loop {
        let v = next_json(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

/// Waits for the cell to settle in `terminal` after it has left t=0.
async fn wait_terminal(handle: &ServerHandle, terminal: Terminal) -> Snapshot {
    let mut rx = handle.subscribe();
    let settled = rx.wait_for(|s| s.t_us > 0 && s.terminal.is_some());
    let snap = timeout(WAIT, settled).await.expect("settled in time").unwrap().clone();
    assert_eq!(snap.terminal, Some(terminal), "{snap:?}");
    snap
}

fn inputs(log: &EventLog) -> Vec<(u64, String)> {
    log.filter("kernel", "input").map(|r| (r.t_us, r.payload["kind"].as_str().unwrap().to_string())).collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn connect_receives_snapshot_immediately() {
    let handle = start(local(), ServeConfig::new(manual_start())).await.unwrap();
    let mut ws = connect(&handle).await;
    let snap = next_json(&mut ws).await;
    assert_eq!(snap["type"], "snapshot");
    assert_eq!(snap["v"], 1);
    assert_eq!(snap["cycle"]["phase"], "idle");
    assert_eq!(snap["light_tower"], serde_json::json!({"green": false, "amber": true, "red": false}));
    assert_eq!(snap["total_parts"], 25);
    // The payload is a well-formed snapshot on the Rust side too.
    serde_json::from_value::<Snapshot>(snap).unwrap();
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn start_command_leaves_idle() {
    let handle = start(local(), ServeConfig::new(manual_start())).await.unwrap();
    let mut ws = connect(&handle).await;
    assert_eq!(next_json(&mut ws).await["cycle"]["phase"], "idle");
    send(&mut ws, r#"{"type":"command","kind":"start","params":{},"client_id":"panel-1"}"#).await;
    loop {
        let snap = next_of_type(&mut ws, "snapshot").await;
        if snap["cycle"]["phase"] != "idle" {
            break;
        }
    }
    let done = wait_terminal(&handle, Terminal::Complete).await;
    assert_eq!(done.parts_done, 25);
    handle.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_message_gets_error_and_connection_survives() {
    let handle = start(local(), ServeConfig::new(manual_start())).await.unwrap();
    let mut ws = connect(&handle).await;
    next_json(&mut ws).await;

    for bad in [
        "not json",
        r#"{"type":"command","kind":"launch"}"#,
        r#"{"type":"command","kind":"start","v":7}"#,
        r#"{"type":"command","kind":"inject","params":{"kind":"part_missing","column":"x"}}"#,
    ] {
        send(&mut ws, bad).await;
        let reply = next_of_type(&mut ws, "error").await;
        assert_eq!(reply["v"], 1);
        assert!(reply["message"].as_str().is_some_and(|m| !m.is_empty()), "{reply}");
    }
    ws.send(Message::Binary(vec![1, 2, 3].into())).await.unwrap();
    next_of_type(&mut ws, "error").await;

    // Same socket still drives the cell.
    send(&mut ws, r#"{"type":"command","kind":"start","client_id":"panel-1"}"#).await;
    wait_terminal(&handle, Terminal::Complete).await;
    handle.shutdown().await.unwrap();
}

/// Two clients deliver start and estop for the same tick, in either order.
async fn same_tick_race(first: &str, second: &str) -> EventLog {
    let config = ServeConfig { start_paused: true, ..ServeConfig::new(manual_start()) };
    let handle = start(local(), config).await.unwrap();
    let mut a = connect(&handle).await;
    let mut b = connect(&handle).await;
    next_json(&mut a).await;
    next_json(&mut b).await;
    send(&mut a, &format!(r#"{{"type":"command","kind":"{first}","client_id":"a"}}"#)).await;
    send(&mut b, &format!(r#"{{"type":"command","kind":"{second}","client_id":"b"}}"#)).await;
    let deadline = Instant::now() + WAIT;
    while handle.queued_len() < 2 {
        assert!(Instant::now() < deadline, "commands never queued");
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    handle.resume();
    let snap = wait_terminal(&handle, Terminal::Faulted).await;
    assert_eq!(snap.safety.fault_cause.as_deref(), Some("estop"));
    handle.shutdown().await.unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn estop_beats_start_in_the_same_tick() {
    for (first, second) in [("start", "estop"), ("estop", "start")] {
        let log = same_tick_race(first, second).await;
        let inputs = inputs(&log);
        assert_eq!(inputs.len(), 2, "{inputs:?}");
        assert_eq!(inputs[0].0, inputs[1].0, "delivered in one tick");
        assert_eq!(inputs[0].1, "estop_press");
        assert_eq!(inputs[1].1, "start_press");
        // The cycle never started and nothing moved.
        assert_eq!(log.filter("sequencer", "phase").filter(|r| r.payload["to"] == "initializing").count(), 0);
        for source in ["motion", "fluidics", "goniometry"] {
            assert!(log.records().iter().all(|r| r.source != source), "{source} event after estop");
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn served_without_clients_matches_headless() {
    let headless = acat_core::run(Scenario::default()).unwrap().simulation.into_log();
    let handle = start(local(), ServeConfig::new(Scenario::default())).await.unwrap();
    wait_terminal(&handle, Terminal::Complete).await;
    let served = handle.shutdown().await.unwrap();
    assert_eq!(served.to_jsonl(), headless.to_jsonl());
}

#[tokio::test(flavor = "multi_thread")]
async fn paced_run_matches_headless_and_coalesces_snapshots() {
    let scenario = Scenario { max_time_s: 7200, ..Scenario::default() };
    let config = ServeConfig { speed: Speed::Factor(600.0), ..ServeConfig::new(scenario.clone()) };
    let handle = start(local(), config).await.unwrap();
    let mut ws = connect(&handle).await;
    let t0 = Instant::now();
    let mut count = 0u32;
    while t0.elapsed() < Duration::from_secs(1) {
        if let Ok(Some(Ok(Message::Text(_)))) = timeout(Duration::from_millis(100), ws.next()).await {
            count += 1;
        }
    }
    // One snapshot on connect plus at most 30 per second after it.
    assert!(count <= 32, "{count} snapshots in one second");
    assert!(count >= 5, "{count} snapshots in one second");
    // 731 s of virtual time at 600x takes about 1.2 s.
    wait_terminal(&handle, Terminal::Complete).await;
    let served = handle.shutdown().await.unwrap();
    let headless = acat_core::run(scenario).unwrap().simulation.into_log();
    assert_eq!(served.to_jsonl(), headless.to_jsonl());
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_port_is_a_startup_error() {
    let first = start(local(), ServeConfig::new(manual_start())).await.unwrap();
    let err = start(first.addr(), ServeConfig::new(manual_start())).await.err().expect("second bind fails");
    assert!(matches!(err, ServeError::Bind { .. }), "{err}");
    first.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn serve_binary_honours_port_env() {
    let port = StdListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_acat"))
        .args(["serve", "--port", "1"])
        .env("ACAT_PORT", port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let url = format!("ws://127.0.0.1:{port}/ws");
    let deadline = Instant::now() + WAIT;
    let mut ws = loop {
        match connect_async(&url).await {
            Ok((ws, _)) => break ws,
            Err(_) if Instant::now() < deadline => tokio::time::sleep(Duration::from_millis(50)).await,
            Err(e) => {
                child.kill().unwrap();
                panic!("never connected: {e}");
            }
        }
    };
    let snap = next_json(&mut ws).await;
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(snap["type"], "snapshot");
}
