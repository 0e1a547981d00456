//! Stable text rendering of logs and node state, one entry per line.

use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use super::{Command, LogEntry, Node};

pub fn format_command(c: &Command) -> String {
    match c {
        Command::Append { key, value } => format!("append {key} {value}"),
        Command::Noop => String::from("noop"),
        Command::EndLease => String::from("end-lease"),
    }
}

/// `index<TAB>term<TAB>command<TAB>[earliest,latest]` per entry, times in ns.
pub fn dump_log(log: &[LogEntry]) -> String {
    let mut s = String::new();
    for e in log {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}",
            e.index,
            e.term,
            format_command(&e.command),
            e.write_time
        );
    }
    s
}

pub fn dump_node(node: &Node) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# node={} role={} term={} commit={} applied={}",
        node.id(),
        node.role(),
        node.term(),
        node.commit_index(),
        node.last_applied()
    );
    s.push_str(&dump_log(node.log()));
    s
}
