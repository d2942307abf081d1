//! MiniLang, the built-in reference backend.
//!
//! A program is line-oriented. Line 1 must be `mem N`, declaring N integer
//! cells initialized to 0. Every later line is one op:
//!
//! ```text
//! set i v      cell i <- v
//! add i j k    cell i <- cell j + cell k
//! sub i j k    cell i <- cell j - cell k
//! jnz i L      jump to line L if cell i != 0
//! out i        emit cell i
//! ```
//!
//! One op costs one step. The label is assigned by the first failing check in
//! order: Compilation_Error (parse/arity/unknown op), Memory_Fault (cell index
//! >= declared memory, or declared memory > memory budget), Timeout (executed
//! steps > step limit), Wrong_Output (emitted values != expected), else Pass.
//! Arithmetic wraps so every program is total and deterministic.

use crate::backends::{Observation, ObservationSource, OutcomeLabel};
use crate::envstore::EnvironmentBundle;

/// Artifact that lists the expected output values, one decimal integer per line.
pub const TEST_SPEC_ARTIFACT: &str = "tests.expected";

#[derive(Debug, Clone, Copy)]
enum Op {
    Set { cell: u64, value: i64 },
    Add { dst: u64, a: u64, b: u64 },
    Sub { dst: u64, a: u64, b: u64 },
    Jnz { cell: u64, line: u64 },
    Out { cell: u64 },
}

impl Op {
    fn cells(&self) -> [Option<u64>; 3] {
        match *self {
            Op::Set { cell, .. } => [Some(cell), None, None],
            Op::Add { dst, a, b } | Op::Sub { dst, a, b } => [Some(dst), Some(a), Some(b)],
            Op::Jnz { cell, .. } => [Some(cell), None, None],
            Op::Out { cell } => [Some(cell), None, None],
        }
    }
}

struct Program {
    declared_memory: u64,
    /// Ops in line order; op at index k sits on source line k + 2.
    ops: Vec<Op>,
}

enum CompileFault {
    /// (line number, cause)
    Error(usize, String),
}

fn parse_cell(token: &str, line: usize) -> Result<u64, CompileFault> {
    token
        .parse::<u64>()
        .map_err(|_| CompileFault::Error(line, format!("invalid cell index `{token}`")))
}

fn parse_value(token: &str, line: usize) -> Result<i64, CompileFault> {
    token
        .parse::<i64>()
        .map_err(|_| CompileFault::Error(line, format!("invalid integer `{token}`")))
}

fn parse_program(code: &str) -> Result<Program, CompileFault> {
    let lines: Vec<&str> = code.trim_end().lines().map(str::trim).collect();
    if lines.is_empty() {
        return Err(CompileFault::Error(1, "missing `mem` declaration".to_string()));
    }

    let head: Vec<&str> = lines[0].split_whitespace().collect();
    let declared_memory = match head.as_slice() {
        ["mem", n] => n
            .parse::<u64>()
            .map_err(|_| CompileFault::Error(1, format!("invalid memory size `{n}`")))?,
        ["mem", ..] => {
            return Err(CompileFault::Error(1, "`mem` expects 1 operand".to_string()))
        }
        _ => {
            return Err(CompileFault::Error(
                1,
                "first line must be a `mem N` declaration".to_string(),
            ))
        }
    };

    let line_count = lines.len() as u64;
    let mut ops = Vec::with_capacity(lines.len().saturating_sub(1));
    for (idx, raw) in lines.iter().enumerate().skip(1) {
        let line = idx + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let arity = |expected: usize| -> Result<(), CompileFault> {
            if tokens.len() - 1 != expected {
                return Err(CompileFault::Error(
                    line,
                    format!("`{}` expects {} operands", tokens[0], expected),
                ));
            }
            Ok(())
        };
        let op = match tokens.first().copied() {
            None => return Err(CompileFault::Error(line, "empty line".to_string())),
            Some("set") => {
                arity(2)?;
                Op::Set {
                    cell: parse_cell(tokens[1], line)?,
                    value: parse_value(tokens[2], line)?,
                }
            }
            Some("add") => {
                arity(3)?;
                Op::Add {
                    dst: parse_cell(tokens[1], line)?,
                    a: parse_cell(tokens[2], line)?,
                    b: parse_cell(tokens[3], line)?,
                }
            }
            Some("sub") => {
                arity(3)?;
                Op::Sub {
                    dst: parse_cell(tokens[1], line)?,
                    a: parse_cell(tokens[2], line)?,
                    b: parse_cell(tokens[3], line)?,
                }
            }
            Some("jnz") => {
                arity(2)?;
                let cell = parse_cell(tokens[1], line)?;
                let target = tokens[2].parse::<u64>().map_err(|_| {
                    CompileFault::Error(line, format!("invalid jump target `{}`", tokens[2]))
                })?;
                if target < 2 || target > line_count {
                    return Err(CompileFault::Error(
                        line,
                        format!("jump target {target} out of range"),
                    ));
                }
                Op::Jnz { cell, line: target }
            }
            Some("out") => {
                arity(1)?;
                Op::Out {
                    cell: parse_cell(tokens[1], line)?,
                }
            }
            Some("mem") => {
                return Err(CompileFault::Error(
                    line,
                    "`mem` is only allowed on line 1".to_string(),
                ))
            }
            Some(other) => {
                return Err(CompileFault::Error(line, format!("unknown op `{other}`")))
            }
        };
        ops.push(op);
    }
    Ok(Program {
        declared_memory,
        ops,
    })
}

/// Expected outputs from `tests.expected`: one decimal integer per line.
/// Blank and unparseable lines are ignored.
fn expected_outputs(bundle: &EnvironmentBundle) -> Vec<i64> {
    bundle
        .artifact(TEST_SPEC_ARTIFACT)
        .map(|bytes| {
            String::from_utf8_lossy(bytes)
                .lines()
                .filter_map(|l| l.trim().parse::<i64>().ok())
                .collect()
        })
        .unwrap_or_default()
}

fn observation(label: OutcomeLabel, diagnostic: String, emitted: Option<Vec<i64>>) -> Observation {
    Observation {
        label,
        diagnostic,
        numeric_outputs: emitted,
        diff_summary: None,
        wall_time_ms: 0,
        source: ObservationSource::Real,
    }
}

/// Interpret `code` under the bundle's resource limits. Deterministic:
/// identical (bundle, code) pairs yield identical observations (the caller
/// stamps wall time).
pub fn run(bundle: &EnvironmentBundle, code: &str) -> Observation {
    let program = match parse_program(code) {
        Ok(program) => program,
        Err(CompileFault::Error(line, cause)) => {
            return observation(
                OutcomeLabel::CompilationError,
                format!("line {line}: {cause}"),
                None,
            )
        }
    };

    let budget = bundle.resource_limits.memory_budget;
    if program.declared_memory > budget {
        return observation(
            OutcomeLabel::MemoryFault,
            format!(
                "line 1: declared memory {} exceeds budget {}",
                program.declared_memory, budget
            ),
            None,
        );
    }

    let step_limit = bundle.resource_limits.step_limit;
    let mut cells = vec![0i64; program.declared_memory as usize];
    let mut emitted: Vec<i64> = Vec::new();
    let mut emitted_lines: Vec<usize> = Vec::new();
    let mut steps: u64 = 0;
    let mut pc: usize = 0;
    let mut last_line = 1usize;

    while pc < program.ops.len() {
        let line = pc + 2;
        last_line = line;
        if steps == step_limit {
            return observation(
                OutcomeLabel::Timeout,
                format!("line {line}: step limit {step_limit} exceeded"),
                None,
            );
        }
        steps += 1;

        let op = program.ops[pc];
        for cell in op.cells().into_iter().flatten() {
            if cell >= program.declared_memory {
                return observation(
                    OutcomeLabel::MemoryFault,
                    format!(
                        "line {line}: cell index {cell} out of range (declared {})",
                        program.declared_memory
                    ),
                    None,
                );
            }
        }

        match op {
            Op::Set { cell, value } => {
                cells[cell as usize] = value;
                pc += 1;
            }
            Op::Add { dst, a, b } => {
                cells[dst as usize] = cells[a as usize].wrapping_add(cells[b as usize]);
                pc += 1;
            }
            Op::Sub { dst, a, b } => {
                cells[dst as usize] = cells[a as usize].wrapping_sub(cells[b as usize]);
                pc += 1;
            }
            Op::Jnz { cell, line: target } => {
                if cells[cell as usize] != 0 {
                    pc = (target - 2) as usize;
                } else {
                    pc += 1;
                }
            }
            Op::Out { cell } => {
                emitted.push(cells[cell as usize]);
                emitted_lines.push(line);
                pc += 1;
            }
        }
    }

    let expected = expected_outputs(bundle);
    if emitted != expected {
        let (line, cause) = first_output_mismatch(&emitted, &expected, &emitted_lines, last_line);
        let mut obs = observation(OutcomeLabel::WrongOutput, format!("line {line}: {cause}"), Some(emitted.clone()));
        obs.diff_summary = Some(format!("expected {expected:?}; got {emitted:?}"));
        return obs;
    }
    observation(OutcomeLabel::Pass, String::new(), Some(emitted))
}

fn first_output_mismatch(
    emitted: &[i64],
    expected: &[i64],
    emitted_lines: &[usize],
    last_line: usize,
) -> (usize, String) {
    for (i, (got, want)) in emitted.iter().zip(expected.iter()).enumerate() {
        if got != want {
            return (
                emitted_lines[i],
                format!("output {i} expected {want}, got {got}"),
            );
        }
    }
    (
        emitted_lines.last().copied().unwrap_or(last_line),
        format!(
            "produced {} of {} expected values",
            emitted.len(),
            expected.len()
        ),
    )
}
