//! Child process launching with resource limits and bounded capture.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Read};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkIsolation {
    /// Spawn fails if a private network namespace cannot be created.
    Required,
    BestEffort,
    Off,
}

#[derive(Debug, Clone)]
pub struct ProcessSpec {
    pub argv: Vec<OsString>,
    pub env: Vec<(OsString, OsString)>,
    pub cwd: PathBuf,
    pub stdin: Option<PathBuf>,
    pub time_limit: Duration,
    /// Address-space limit in bytes; `None` leaves it unlimited.
    pub memory_limit: Option<u64>,
    pub stdout_cap: usize,
    pub stderr_cap: usize,
    pub network: NetworkIsolation,
    pub pin_cpu: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Code(i32),
    Signal(i32),
}

#[derive(Debug)]
pub struct ProcessOutcome {
    pub exit: Exit,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdout_truncated: bool,
    pub timed_out: bool,
    pub wall: Duration,
}

/// Hook run between fork and exec of a child.
///
/// When a hook is supplied the child blocks before `exec` until
/// [`SpawnHook::attach`] returns, so counters opened on the child pid see the
/// whole program from its first instruction.
pub trait SpawnHook {
    fn attach(&mut self, pid: libc::pid_t) -> io::Result<()>;
}

fn cvt(ret: libc::c_int) -> io::Result<libc::c_int> {
    if ret == -1 {
        Err(io::Error::last_os_error())
    } else {
        Ok(ret)
    }
}

fn set_limit(resource: libc::__rlimit_resource_t, value: u64) -> io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: value as libc::rlim_t,
        rlim_max: value as libc::rlim_t,
    };
    cvt(unsafe { libc::setrlimit(resource, &lim) }).map(|_| ())
}

fn pipe_cloexec() -> io::Result<(OwnedFd, OwnedFd)> {
    let mut fds = [0; 2];
    cvt(unsafe { libc::pipe2(fds.as_mut_ptr(), libc::O_CLOEXEC) })?;
    Ok(unsafe { (OwnedFd::from_raw_fd(fds[0]), OwnedFd::from_raw_fd(fds[1])) })
}

fn capture<R: Read + Send + 'static>(mut src: R, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 64 * 1024];
        loop {
            match src.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(_) => break,
            }
        }
        (kept, truncated)
    })
}

fn kill_group(pid: libc::pid_t) {
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

pub fn run(spec: &ProcessSpec, hook: Option<&mut dyn SpawnHook>) -> io::Result<ProcessOutcome> {
    let (program, args) = spec
        .argv
        .split_first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty argv"))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .env_clear()
        .envs(spec.env.iter().map(|(k, v)| (k, v)))
        .current_dir(&spec.cwd)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    match &spec.stdin {
        Some(path) => {
            cmd.stdin(Stdio::from(File::open(path)?));
        }
        None => {
            cmd.stdin(Stdio::null());
        }
    }

    // `gate` holds the child before exec; `ready` carries its pid back, since
    // `Command::spawn` itself does not return until the exec happens.
    let gate = if hook.is_some() { Some(pipe_cloexec()?) } else { None };
    let ready = if hook.is_some() { Some(pipe_cloexec()?) } else { None };
    let gate_read = gate.as_ref().map(|(r, _)| r.as_raw_fd());
    let ready_write = ready.as_ref().map(|(_, w)| w.as_raw_fd());
    let cpu_seconds = spec.time_limit.as_secs() + 2;
    let memory = spec.memory_limit;
    let network = spec.network;
    let pin = spec.pin_cpu;
    let fsize: u64 = 256 << 20;
    unsafe {
        cmd.pre_exec(move || {
            cvt(libc::setsid())?;
            match network {
                NetworkIsolation::Off => {}
                NetworkIsolation::Required | NetworkIsolation::BestEffort => {
                    let mut ok = libc::unshare(libc::CLONE_NEWNET) == 0;
                    if !ok {
                        ok = libc::unshare(libc::CLONE_NEWUSER | libc::CLONE_NEWNET) == 0;
                    }
                    if !ok && network == NetworkIsolation::Required {
                        return Err(io::Error::last_os_error());
                    }
                }
            }
            if let Some(cpu) = pin {
                let mut set: libc::cpu_set_t = std::mem::zeroed();
                libc::CPU_SET(cpu, &mut set);
                cvt(libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set))?;
            }
            if let Some(bytes) = memory {
                set_limit(libc::RLIMIT_AS, bytes)?;
            }
            set_limit(libc::RLIMIT_CPU, cpu_seconds)?;
            set_limit(libc::RLIMIT_FSIZE, fsize)?;
            set_limit(libc::RLIMIT_CORE, 0)?;
            if let (Some(fd), Some(ready)) = (gate_read, ready_write) {
                let pid = libc::getpid();
                let bytes = pid.to_ne_bytes();
                if libc::write(ready, bytes.as_ptr() as *const libc::c_void, bytes.len())
                    != bytes.len() as isize
                {
                    return Err(io::Error::last_os_error());
                }
                let mut byte = 0u8;
                loop {
                    let n = libc::read(fd, &mut byte as *mut u8 as *mut libc::c_void, 1);
                    if n >= 0 {
                        break;
                    }
                    let err = io::Error::last_os_error();
                    if err.kind() != io::ErrorKind::Interrupted {
                        return Err(err);
                    }
                }
            }
            Ok(())
        });
    }

    let mut child = match (hook, gate, ready) {
        (Some(hook), Some((gate_r, gate_w)), Some((ready_r, ready_w))) => {
            let spawned = thread::scope(|scope| -> io::Result<Child> {
                let spawner = scope.spawn(move || {
                    let child = cmd.spawn();
                    // Closing our copy lets the reader see EOF if the child died early.
                    drop(ready_w);
                    drop(gate_r);
                    child
                });
                let mut buf = [0u8; std::mem::size_of::<libc::pid_t>()];
                let mut file = std::fs::File::from(ready_r);
                let got = file.read_exact(&mut buf);
                let attached = match got {
                    Ok(()) => {
                        let pid = libc::pid_t::from_ne_bytes(buf);
                        hook.attach(pid).inspect_err(|_| kill_group(pid))
                    }
                    Err(e) => Err(e),
                };
                if attached.is_ok() {
                    let byte = 1u8;
                    unsafe {
                        libc::write(gate_w.as_raw_fd(), &byte as *const u8 as *const libc::c_void, 1);
                    }
                }
                drop(gate_w);
                let child = spawner
                    .join()
                    .map_err(|_| io::Error::other("spawner thread panicked"))?;
                match (child, attached) {
                    (Err(e), _) => Err(e),
                    (Ok(mut c), Err(e)) => {
                        let _ = c.kill();
                        let _ = c.wait();
                        Err(e)
                    }
                    (Ok(c), Ok(())) => Ok(c),
                }
            });
            spawned?
        }
        _ => cmd.spawn()?,
    };
    let pid = child.id() as libc::pid_t;
    let start = Instant::now();

    let out = capture(child.stdout.take().expect("piped stdout"), spec.stdout_cap);
    let err = capture(child.stderr.take().expect("piped stderr"), spec.stderr_cap);

    let (tx, rx) = mpsc::channel::<io::Result<ExitStatus>>();
    let waiter = thread::spawn(move || {
        let _ = tx.send(child.wait());
    });
    let (status, timed_out) = match rx.recv_timeout(spec.time_limit) {
        Ok(status) => (status?, false),
        Err(mpsc::RecvTimeoutError::Timeout) => {
            kill_group(pid);
            let status = rx
                .recv()
                .map_err(|_| io::Error::other("waiter thread vanished"))??;
            (status, true)
        }
        Err(mpsc::RecvTimeoutError::Disconnected) => {
            return Err(io::Error::other("waiter thread vanished"))
        }
    };
    let wall = start.elapsed();
    // Reap stragglers left in the session by the child.
    kill_group(pid);
    let _ = waiter.join();
    let (stdout, stdout_truncated) = out.join().unwrap_or_default();
    let (stderr, _) = err.join().unwrap_or_default();

    let exit = match (status.code(), status.signal()) {
        (Some(code), _) => Exit::Code(code),
        (None, Some(sig)) => Exit::Signal(sig),
        (None, None) => Exit::Code(-1),
    };
    Ok(ProcessOutcome {
        exit,
        stdout,
        stderr,
        stdout_truncated,
        timed_out,
        wall,
    })
}

/// Returns whether a private network namespace can be created here.
pub fn network_isolation_available(probe_binary: &Path) -> bool {
    let spec = ProcessSpec {
        argv: vec![probe_binary.as_os_str().to_owned(), "-c".into(), "pass".into()],
        env: Vec::new(),
        cwd: std::env::temp_dir(),
        stdin: None,
        time_limit: Duration::from_secs(10),
        memory_limit: None,
        stdout_cap: 1024,
        stderr_cap: 1024,
        network: NetworkIsolation::Required,
        pin_cpu: None,
    };
    matches!(run(&spec, None), Ok(o) if o.exit == Exit::Code(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str, limit: Duration) -> ProcessSpec {
        ProcessSpec {
            argv: vec!["/bin/sh".into(), "-c".into(), script.into()],
            env: vec![("PATH".into(), "/usr/bin:/bin".into())],
            cwd: std::env::temp_dir(),
            stdin: None,
            time_limit: limit,
            memory_limit: None,
            stdout_cap: 1 << 20,
            stderr_cap: 1 << 20,
            network: NetworkIsolation::BestEffort,
            pin_cpu: None,
        }
    }

    #[test]
    fn captures_output_and_exit_code() {
        let o = run(&sh("echo hi; echo err >&2; exit 3", Duration::from_secs(5)), None).unwrap();
        assert_eq!(o.exit, Exit::Code(3));
        assert_eq!(o.stdout, b"hi\n");
        assert_eq!(o.stderr, b"err\n");
        assert!(!o.timed_out);
    }

    #[test]
    fn timeout_kills_the_whole_group() {
        let dir = tempfile::tempdir().unwrap();
        let marker = dir.path().join("late");
        let script = format!("(sleep 3; touch {}) & sleep 30", marker.display());
        let start = Instant::now();
        let o = run(&sh(&script, Duration::from_millis(500)), None).unwrap();
        assert!(o.timed_out);
        assert!(start.elapsed() < Duration::from_millis(1500));
        thread::sleep(Duration::from_millis(3500));
        assert!(!marker.exists(), "background grandchild survived the timeout");
    }

    #[test]
    fn stdout_cap_truncates() {
        let mut spec = sh("head -c 5000 /dev/zero", Duration::from_secs(5));
        spec.stdout_cap = 100;
        let o = run(&spec, None).unwrap();
        assert!(o.stdout_truncated);
        assert_eq!(o.stdout.len(), 100);
    }

    struct Recorder(Option<libc::pid_t>);
    impl SpawnHook for Recorder {
        fn attach(&mut self, pid: libc::pid_t) -> io::Result<()> {
            self.0 = Some(pid);
            Ok(())
        }
    }

    #[test]
    fn hook_sees_pid_before_exec() {
        let mut rec = Recorder(None);
        let o = run(&sh("echo $$", Duration::from_secs(5)), Some(&mut rec)).unwrap();
        let printed: i32 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
        assert_eq!(rec.0, Some(printed));
    }
}
