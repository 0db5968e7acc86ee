/** Minimal CSV reader for the trace/sweep files the SLAM CLI emits. */

export interface Table {
  columns: string[];
  rows: number[][];
}

export function parseCsv(text: string): Table {
  const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
  if (lines.length < 2) {
    throw new Error("CSV needs a header row and at least one data row");
  }
  const columns = lines[0].split(",").map((c) => c.trim());
  const rows = lines.slice(1).map((line, i) => {
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new Error(`row ${i + 2}: expected ${columns.length} cells, got ${cells.length}`);
    }
    return cells.map((c) => {
      const v = Number(c);
      return c.trim() === "" ? NaN : v;
    });
  });
  return { columns, rows };
}

/** Column values by name; throws naming the column when absent. */
export function column(table: Table, name: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new Error(`missing column: ${name}`);
  }
  return table.rows.map((r) => r[idx]);
}

export function hasColumn(table: Table, name: string): boolean {
  return table.columns.includes(name);
}
