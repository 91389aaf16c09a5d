//! Launching and killing real master processes.

use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::monitor::poll_once;
use crate::recovery::parse_recovery_ms;
use rescue_core::EndpointUri;

/// A free TCP port on the loopback interface.
pub fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map(|a| a.port())
        .expect("ephemeral port")
}

#[derive(Debug, Clone)]
pub struct MasterLaunch {
    pub bin: PathBuf,
    pub port: u16,
    pub rescue: bool,
    /// None: the binary's default location.
    pub checkpoint_path: Option<PathBuf>,
    pub fault_injection: bool,
    pub env: Vec<(String, String)>,
}

impl MasterLaunch {
    pub fn new(bin: impl Into<PathBuf>, port: u16) -> Self {
        MasterLaunch {
            bin: bin.into(),
            port,
            rescue: false,
            checkpoint_path: None,
            fault_injection: false,
            env: Vec::new(),
        }
    }

    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["--port".to_string(), self.port.to_string()];
        if self.rescue {
            argv.push("--rescue".into());
        }
        if let Some(p) = &self.checkpoint_path {
            argv.push("--checkpoint-path".into());
            argv.push(p.display().to_string());
        }
        if self.fault_injection {
            argv.push("--fault-injection".into());
        }
        argv
    }
}

pub struct MasterProcess {
    child: Child,
    uri: EndpointUri,
    started: Instant,
    lines: Arc<Mutex<Vec<String>>>,
    reader: Option<JoinHandle<()>>,
    status: Option<ExitStatus>,
}

impl MasterProcess {
    pub fn spawn(launch: &MasterLaunch) -> std::io::Result<Self> {
        let started = Instant::now();
        let mut child = Command::new(&launch.bin)
            .args(launch.argv())
            .envs(launch.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let lines = Arc::new(Mutex::new(Vec::new()));
        let stdout = child.stdout.take().expect("piped stdout");
        let reader = {
            let lines = Arc::clone(&lines);
            std::thread::spawn(move || {
                for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                    lines.lock().unwrap().push(line);
                }
            })
        };
        Ok(MasterProcess {
            child,
            uri: EndpointUri::http("127.0.0.1", launch.port).expect("valid loopback uri"),
            started,
            lines,
            reader: Some(reader),
            status: None,
        })
    }

    pub fn uri(&self) -> &str {
        self.uri.as_str()
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    /// Polls `getPid` until it answers. Returns the time since exec, or None
    /// if the process exits or `timeout` passes first.
    pub fn wait_ready(&mut self, timeout: Duration) -> Option<Duration> {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if poll_once(&self.uri, Duration::from_millis(200)) {
                return Some(self.started.elapsed());
            }
            if self.try_status().is_some() {
                return None;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        None
    }

    pub fn output(&self) -> Vec<String> {
        self.lines.lock().unwrap().clone()
    }

    pub fn wait_for_line(&self, pred: impl Fn(&str) -> bool, timeout: Duration) -> Option<String> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(line) = self.lines.lock().unwrap().iter().find(|l| pred(l)) {
                return Some(line.clone());
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// `recovery_ms` from the startup summary line.
    pub fn recovery_ms(&self, timeout: Duration) -> Option<f64> {
        self.wait_for_line(|l| parse_recovery_ms(l).is_some(), timeout)
            .and_then(|l| parse_recovery_ms(&l))
    }

    fn try_status(&mut self) -> Option<ExitStatus> {
        if self.status.is_none() {
            self.status = self.child.try_wait().ok().flatten();
        }
        self.status
    }

    pub fn wait_exit(&mut self, timeout: Duration) -> Option<ExitStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            if let Some(s) = self.try_status() {
                if let Some(r) = self.reader.take() {
                    let _ = r.join();
                }
                return Some(s);
            }
            if Instant::now() >= deadline {
                return None;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// SIGKILL, then reap.
    pub fn kill(&mut self) {
        if self.try_status().is_none() {
            let _ = self.child.kill();
        }
        self.wait_exit(Duration::from_secs(5));
    }

    /// SIGSTOP: the process keeps its socket but answers nothing.
    pub fn pause(&self) {
        // SAFETY: plain signal delivery to our own child
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGSTOP);
        }
    }

    pub fn resume(&self) {
        // SAFETY: as above
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGCONT);
        }
    }
}

impl Drop for MasterProcess {
    fn drop(&mut self) {
        self.resume();
        self.kill();
    }
}
