use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rescue::harness::process::{free_port, MasterLaunch, MasterProcess};
use rescue::monitor::{self, poll_once, MonitorConfig, MonitorEvent};
use rescue_core::EndpointUri;

const MASTER: &str = env!("CARGO_BIN_EXE_rescue_master");

#[test]
fn paused_master_misses_polls_then_answers_again() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let launch = MasterLaunch {
        checkpoint_path: Some(dir.path().join("c.yaml")),
        ..MasterLaunch::new(MASTER, port)
    };
    let mut master = MasterProcess::spawn(&launch).unwrap();
    master.wait_ready(Duration::from_secs(10)).unwrap();
    let uri = EndpointUri::http("127.0.0.1", port).unwrap();
    assert!(poll_once(&uri, Duration::from_millis(200)));
    master.pause();
    assert!(!poll_once(&uri, Duration::from_millis(200)));
    master.resume();
    assert!(poll_once(&uri, Duration::from_millis(500)));
}

#[test]
fn stable_master_is_never_restarted() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut master = MasterProcess::spawn(&MasterLaunch {
        checkpoint_path: Some(dir.path().join("c.yaml")),
        ..MasterLaunch::new(MASTER, port)
    })
    .unwrap();
    master.wait_ready(Duration::from_secs(10)).unwrap();
    let mut config = MonitorConfig::new(EndpointUri::http("127.0.0.1", port).unwrap(), vec!["false".into()]);
    config.poll_interval = Duration::from_millis(5);
    config.failure_threshold = 1;
    let stop = AtomicBool::new(false);
    let mut events = Vec::new();
    std::thread::scope(|s| {
        s.spawn(|| {
            std::thread::sleep(Duration::from_millis(600));
            stop.store(true, Ordering::Relaxed);
        });
        let summary = monitor::run_monitor(&config, &stop, &mut |e| events.push(e.clone())).unwrap();
        assert_eq!(summary.restarts, 0);
    });
    assert_eq!(events, vec![MonitorEvent::Healthy]);
}

#[test]
fn killed_master_is_restarted_once_with_rescue() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let ckpt = dir.path().join("c.yaml");
    let mut master = MasterProcess::spawn(&MasterLaunch {
        rescue: true,
        checkpoint_path: Some(ckpt.clone()),
        ..MasterLaunch::new(MASTER, port)
    })
    .unwrap();
    master.wait_ready(Duration::from_secs(10)).unwrap();

    let argv = monitor::default_restart_command(MASTER.as_ref(), true, port, Some(&ckpt));
    let mut config = MonitorConfig::new(EndpointUri::http("127.0.0.1", port).unwrap(), argv);
    config.poll_interval = Duration::from_millis(50);
    config.failure_threshold = 2;
    config.quiet_children = true;
    let stop = Arc::new(AtomicBool::new(false));
    let events = Arc::new(Mutex::new(Vec::new()));
    let handle = {
        let (stop, events) = (Arc::clone(&stop), Arc::clone(&events));
        std::thread::spawn(move || {
            monitor::run_monitor(&config, &stop, &mut |e| events.lock().unwrap().push(e.clone())).unwrap()
        })
    };
    std::thread::sleep(Duration::from_millis(200));
    master.kill();
    let uri = EndpointUri::http("127.0.0.1", port).unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    while !events.lock().unwrap().iter().any(|e| matches!(e, MonitorEvent::BootGraceOver { answered: true })) {
        assert!(std::time::Instant::now() < deadline, "{:?}", events.lock().unwrap());
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(poll_once(&uri, Duration::from_millis(500)));
    std::thread::sleep(Duration::from_millis(300));
    stop.store(true, Ordering::Relaxed);
    let mut summary = handle.join().unwrap();
    assert_eq!(summary.restarts, 1, "{:?}", events.lock().unwrap());
    for child in &mut summary.children {
        let _ = child.kill();
        let _ = child.wait();
    }
}
