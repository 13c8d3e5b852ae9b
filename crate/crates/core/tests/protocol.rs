mod common;

use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde_json::{json, Value};
use splatdrive::env::{scripted, DrivingEnv, ObsMode, ScenarioConfig, Task, World};
use splatdrive::physics::Controls;
use splatdrive::proto::{Client, Server, Session, SessionState, MAX_FRAME};

fn world() -> Arc<World> {
    static W: OnceLock<Arc<World>> = OnceLock::new();
    W.get_or_init(|| Arc::new(World::fixture(Task::StraightSmall).unwrap())).clone()
}

fn scenario() -> ScenarioConfig {
    ScenarioConfig::for_task(Task::StraightSmall)
}

fn server() -> (std::net::SocketAddr, splatdrive::proto::ShutdownHandle, std::thread::JoinHandle<std::io::Result<()>>) {
    let s = Server::bind("127.0.0.1:0", world(), scenario()).unwrap();
    let addr = s.local_addr().unwrap();
    let (h, j) = s.spawn();
    (addr, h, j)
}

fn hello(c: &mut Client) -> Value {
    c.request(&json!({"type": "hello", "version": 1})).unwrap()
}

fn action_json(a: &Controls) -> Value {
    json!({"throttle": a.throttle, "steer": a.steer, "brake": a.brake})
}

/// A fixed wobbly action sequence, independent of observations.
fn actions(n: usize) -> Vec<Controls> {
    (0..n)
        .map(|i| Controls::new(0.6 + 0.3 * (i as f64 * 0.11).sin(), 0.2 * (i as f64 * 0.07).cos(), 0.0))
        .collect()
}

fn local_trace(seed: u64, acts: &[Controls]) -> Vec<u64> {
    let mut e = DrivingEnv::new(world(), scenario()).unwrap();
    e.reset(seed);
    let mut out = Vec::new();
    for a in acts {
        let t = e.step(*a).unwrap();
        out.push(t.reward.to_bits());
        if t.terminated || t.truncated {
            break;
        }
    }
    out
}

fn remote_trace(c: &mut Client, seed: u64, acts: &[Controls]) -> Vec<u64> {
    let r = c.request(&json!({"type": "reset", "seed": seed})).unwrap();
    assert_eq!(r["type"], "obs");
    let mut out = Vec::new();
    for a in acts {
        let t = c.request(&json!({"type": "step", "action": action_json(a)})).unwrap();
        assert_eq!(t["type"], "transition", "{t}");
        out.push(t["reward"].as_f64().unwrap().to_bits());
        if t["terminated"].as_bool().unwrap() || t["truncated"].as_bool().unwrap() {
            break;
        }
    }
    out
}

#[test]
fn handshake_over_tcp() {
    let (addr, stop, join) = server();
    let mut c = Client::connect(addr).unwrap();
    let r = c.request(&json!({"type": "reset"})).unwrap();
    assert_eq!(r["code"], "handshake_required");
    let r = c.request(&json!({"type": "hello", "version": 7})).unwrap();
    assert_eq!(r["code"], "version_mismatch");
    let r = hello(&mut c);
    assert_eq!(r["type"], "hello_ok");
    assert_eq!(r["obs_spec"]["vector"]["length"], 12);
    assert_eq!(r["obs_spec"]["action"]["low"], json!([-1.0, -1.0, 0.0]));
    let r = c.request(&json!({"type": "close"})).unwrap();
    assert_eq!(r["type"], "bye");
    stop.shutdown();
    join.join().unwrap().unwrap();
}

#[test]
fn remote_rewards_match_in_process_bit_for_bit() {
    let (addr, stop, join) = server();
    let mut c = Client::connect(addr).unwrap();
    hello(&mut c);
    let acts = actions(400);
    assert_eq!(remote_trace(&mut c, 5, &acts), local_trace(5, &acts));
    stop.shutdown();
    join.join().unwrap().unwrap();
}

#[test]
fn concurrent_sessions_are_isolated() {
    let (addr, stop, join) = server();
    let acts = actions(300);
    let threads: Vec<_> = [11u64, 12]
        .into_iter()
        .map(|seed| {
            let acts = acts.clone();
            std::thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                hello(&mut c);
                (seed, remote_trace(&mut c, seed, &acts))
            })
        })
        .collect();
    for t in threads {
        let (seed, trace) = t.join().unwrap();
        assert_eq!(trace, local_trace(seed, &acts), "seed {seed}");
    }
    stop.shutdown();
    join.join().unwrap().unwrap();
}

#[test]
fn terminal_step_ends_the_episode() {
    let mut s = Session::new(world(), scenario()).unwrap();
    s.handle(&json!({"type": "hello", "version": 1}));
    s.handle(&json!({"type": "reset", "seed": 0}));
    let mut last = Value::Null;
    for _ in 0..3000 {
        let obs = s.env().observation_vector();
        let a = scripted::straight(&obs);
        last = s.handle(&json!({"type": "step", "action": action_json(&a)}));
        if last["terminated"] == true || last["truncated"] == true {
            break;
        }
    }
    assert_eq!(last["terminated"], true);
    assert_eq!(last["info"]["outcome"], "goal");
    assert_eq!(s.state(), SessionState::Idle);
    let r = s.handle(&json!({"type": "step", "action": {}}));
    assert_eq!(r["code"], "no_episode");
}

#[test]
fn oversize_frame_closes_the_connection() {
    let (addr, stop, join) = server();
    let mut c = Client::connect(addr).unwrap();
    c.send_raw(&((MAX_FRAME as u32) + 1).to_be_bytes()).unwrap();
    let r = c.recv().unwrap();
    assert_eq!(r["code"], "frame_too_large");
    assert!(c.recv().is_err());
    // the server keeps serving others
    let mut d = Client::connect(addr).unwrap();
    assert_eq!(hello(&mut d)["type"], "hello_ok");
    stop.shutdown();
    join.join().unwrap().unwrap();
}

#[test]
fn image_observations_decode_to_the_advertised_size() {
    let mut sc = scenario();
    sc.obs_mode = ObsMode::Both;
    sc.image_size = [32, 24];
    let mut s = Session::new(world(), sc).unwrap();
    let spec = s.handle(&json!({"type": "hello", "version": 1}))["obs_spec"].clone();
    let r = s.handle(&json!({"type": "reset", "seed": 1}));
    use base64::Engine;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(r["image_b64"].as_str().unwrap())
        .unwrap();
    let w = spec["image"]["width"].as_u64().unwrap() as usize;
    let h = spec["image"]["height"].as_u64().unwrap() as usize;
    assert_eq!((w, h), (32, 24));
    assert_eq!(bytes.len(), w * h * 3);
}

#[test]
fn fuzzed_input_always_gets_well_formed_replies() {
    let stats = common::fuzz_sessions(&world(), &scenario(), 1_000_000, 77).unwrap();
    assert!(stats.sessions > 1);
    assert!(stats.replies > 1_000, "{stats:?}");
}

#[test]
fn server_survives_garbage_connections() {
    let (addr, stop, join) = server();
    let mut r = common::rng(3);
    for _ in 0..20 {
        let mut c = Client::connect(addr).unwrap();
        let garbage: Vec<u8> = (0..r.random_range(1..5000)).map(|_| r.random()).collect();
        let _ = c.send_raw(&garbage);
        drop(c);
    }
    let mut c = Client::connect(addr).unwrap();
    assert_eq!(hello(&mut c)["type"], "hello_ok");
    stop.shutdown();
    join.join().unwrap().unwrap();
}
