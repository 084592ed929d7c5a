//! Running a sandbox's entry executable under a watchdog.

use std::fs::File;
use std::io;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("cannot launch {path}: {source}")]
    LaunchFailure { path: String, source: io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExitKind {
    Success,
    Failed(i32),
    Signalled(i32),
    TimedOut,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecOutcome {
    pub exit: ExitKind,
    /// User plus system CPU time of the process and its reaped children.
    pub cpu_seconds: f64,
    pub wall: Duration,
}

impl ExecOutcome {
    pub fn succeeded(&self) -> bool {
        self.exit == ExitKind::Success
    }
}

fn timeval_secs(tv: libc::timeval) -> f64 {
    tv.tv_sec as f64 + tv.tv_usec as f64 / 1e6
}

/// Runs `entry` in `cwd` with `env` added to the environment. Output goes to
/// `.stdout` and `.stderr` in `cwd`. At `timeout` the whole process group is
/// killed.
pub fn execute(
    entry: &Path,
    cwd: &Path,
    env: &[(&str, String)],
    timeout: Duration,
) -> Result<ExecOutcome, ExecError> {
    let launch = |source| ExecError::LaunchFailure {
        path: entry.display().to_string(),
        source,
    };
    let stdout = File::create(cwd.join(".stdout")).map_err(launch)?;
    let stderr = File::create(cwd.join(".stderr")).map_err(launch)?;
    let mut cmd = Command::new(entry);
    cmd.current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .process_group(0);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let started = Instant::now();
    // A freshly written executable can briefly be busy while another thread
    // forks with its write descriptor open.
    let mut attempts = 0;
    let child = loop {
        match cmd.spawn() {
            Ok(c) => break c,
            Err(e) if e.raw_os_error() == Some(libc::ETXTBSY) && attempts < 50 => {
                attempts += 1;
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(launch(e)),
        }
    };
    let pid = child.id() as libc::pid_t;
    // The child is reaped with wait4 below so its resource usage is exact.
    drop(child);

    let mut timed_out = false;
    let mut status: libc::c_int = 0;
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    loop {
        // SAFETY: pid is our unreaped child; status and usage are valid
        // out-pointers.
        let r = unsafe { libc::wait4(pid, &mut status, libc::WNOHANG, &mut usage) };
        if r == pid {
            break;
        }
        if r < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            return Err(launch(e));
        }
        if !timed_out && started.elapsed() >= timeout {
            timed_out = true;
            // SAFETY: plain syscall; the group was created by process_group(0).
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
        thread::sleep(Duration::from_millis(5));
    }
    // Anything the job left running in its group goes too.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let exit = if timed_out {
        ExitKind::TimedOut
    } else if libc::WIFEXITED(status) {
        match libc::WEXITSTATUS(status) {
            0 => ExitKind::Success,
            c => ExitKind::Failed(c),
        }
    } else {
        ExitKind::Signalled(libc::WTERMSIG(status))
    };
    Ok(ExecOutcome {
        exit,
        cpu_seconds: timeval_secs(usage.ru_utime) + timeval_secs(usage.ru_stime),
        wall: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::os::unix::fs::PermissionsExt;

    fn script(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("run.sh");
        fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
        p
    }

    #[test]
    fn writes_output_and_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let p = script(dir.path(), "printf '%s' \"$GREETING\" > out.dat");
        let out = execute(
            &p,
            dir.path(),
            &[("GREETING", "hi".into())],
            Duration::from_secs(10),
        )
        .unwrap();
        assert!(out.succeeded());
        assert_eq!(fs::read(dir.path().join("out.dat")).unwrap(), b"hi");
    }

    #[test]
    fn nonzero_exit_is_failure() {
        let dir = tempfile::tempdir().unwrap();
        let p = script(dir.path(), "exit 3");
        let out = execute(&p, dir.path(), &[], Duration::from_secs(10)).unwrap();
        assert_eq!(out.exit, ExitKind::Failed(3));
    }

    #[test]
    fn timeout_kills_the_process_group() {
        let dir = tempfile::tempdir().unwrap();
        let p = script(dir.path(), "sleep 30 & sleep 30");
        let out = execute(&p, dir.path(), &[], Duration::from_millis(300)).unwrap();
        assert_eq!(out.exit, ExitKind::TimedOut);
        assert!(out.wall < Duration::from_secs(5));
    }

    #[test]
    fn cpu_time_is_measured() {
        let dir = tempfile::tempdir().unwrap();
        let p = script(
            dir.path(),
            "i=0; while [ $i -lt 200000 ]; do i=$((i+1)); done",
        );
        let out = execute(&p, dir.path(), &[], Duration::from_secs(60)).unwrap();
        assert!(out.succeeded());
        assert!(out.cpu_seconds > 0.0);
        assert!(out.cpu_seconds <= out.wall.as_secs_f64() + 0.5);
    }

    #[test]
    fn missing_executable_fails_to_launch() {
        let dir = tempfile::tempdir().unwrap();
        let err = execute(
            &dir.path().join("nope"),
            dir.path(),
            &[],
            Duration::from_secs(1),
        );
        assert!(matches!(err, Err(ExecError::LaunchFailure { .. })));
    }
}
