/** Figure builders over the documented trace/sweep CSV schemas.
 *
 * Trace columns used here: t, est_x/y/z, gt_x/y/z, traj_error, dc_mean,
 * src0_x/y/z, src0_error. Sweep columns: particles, mean_traj_error,
 * mean_source_error. Each builder consumes parsed tables only, so the
 * renderer stays decoupled from the estimator internals.
 */

import { Table, column, hasColumn } from "./csv.js";
import { ChartSpec, Marker, renderChart, Series } from "./svg.js";

const COLORS = ["#c0392b", "#2471a3", "#1e8449", "#7d3c98", "#b7950b"];

export type PlotKind =
  | "trajectory"
  | "error_time"
  | "dc_convergence"
  | "sweep"
  | "distance_vs_error";

export interface PlotInput {
  label: string;
  table: Table;
}

export function buildChart(kind: PlotKind, inputs: PlotInput[], ref?: number): ChartSpec {
  if (inputs.length === 0) {
    throw new Error("need at least one input file");
  }
  switch (kind) {
    case "trajectory":
      return trajectory(inputs);
    case "error_time":
      return errorTime(inputs);
    case "dc_convergence":
      return dcConvergence(inputs, ref);
    case "sweep":
      return sweep(inputs[0].table);
    case "distance_vs_error":
      return distanceVsError(inputs[0]);
    default:
      throw new Error(`unknown plot kind: ${kind}`);
  }
}

function trajectory(inputs: PlotInput[]): ChartSpec {
  const series: Series[] = [];
  const points: Marker[] = [];
  const gt = inputs[0].table;
  series.push({
    label: "ground truth",
    x: column(gt, "gt_x"),
    y: column(gt, "gt_y"),
    color: "#222222",
  });
  inputs.forEach((input, i) => {
    series.push({
      label: input.label,
      x: column(input.table, "est_x"),
      y: column(input.table, "est_y"),
      color: COLORS[i % COLORS.length],
      dash: i === 0 ? "4 3" : "8 4",
    });
    if (hasColumn(input.table, "src0_x")) {
      const sx = column(input.table, "src0_x");
      const sy = column(input.table, "src0_y");
      points.push({
        x: sx[sx.length - 1],
        y: sy[sy.length - 1],
        color: COLORS[i % COLORS.length],
        label: `${input.label} source`,
        shape: "triangle",
      });
    }
  });
  return {
    title: "Trajectory overlay",
    xLabel: "x (m)",
    yLabel: "y (m)",
    series,
    points,
    equalAspect: true,
  };
}

function errorTime(inputs: PlotInput[]): ChartSpec {
  const series: Series[] = inputs.map((input, i) => ({
    label: input.label,
    x: column(input.table, "t"),
    y: column(input.table, "traj_error"),
    color: COLORS[i % COLORS.length],
    markers: true,
  }));
  return {
    title: "Trajectory error over time",
    xLabel: "time (s)",
    yLabel: "error (m)",
    series,
  };
}

function dcConvergence(inputs: PlotInput[], ref?: number): ChartSpec {
  const series: Series[] = inputs.map((input, i) => ({
    label: input.label,
    x: column(input.table, "t"),
    y: column(input.table, "dc_mean"),
    color: COLORS[i % COLORS.length],
  }));
  if (ref !== undefined) {
    const t = column(inputs[0].table, "t");
    series.push({
      label: "reference",
      x: [t[0], t[t.length - 1]],
      y: [ref, ref],
      color: "#555555",
      dash: "2 3",
    });
  }
  return {
    title: "Critical-distance estimate",
    xLabel: "time (s)",
    yLabel: "critical distance (m)",
    series,
  };
}

function sweep(table: Table): ChartSpec {
  const counts = column(table, "particles");
  const series: Series[] = [
    {
      label: "trajectory error",
      x: counts,
      y: column(table, "mean_traj_error"),
      color: COLORS[0],
      markers: true,
    },
  ];
  if (hasColumn(table, "mean_source_error")) {
    series.push({
      label: "source error",
      x: counts,
      y: column(table, "mean_source_error"),
      color: COLORS[1],
      markers: true,
    });
  }
  return {
    title: "Error vs particle count",
    xLabel: "particles",
    yLabel: "mean error (m)",
    series,
  };
}

function distanceVsError(input: PlotInput): ChartSpec {
  const t = column(input.table, "t");
  const gx = column(input.table, "gt_x");
  const gy = column(input.table, "gt_y");
  const gz = column(input.table, "gt_z");
  const sx = column(input.table, "src0_x");
  const sy = column(input.table, "src0_y");
  const sz = column(input.table, "src0_z");
  const dist = t.map((_, i) =>
    Math.hypot(gx[i] - sx[i], gy[i] - sy[i], gz[i] - sz[i]));
  return {
    title: "Robot-source distance vs trajectory error",
    xLabel: "time (s)",
    yLabel: "meters",
    series: [
      { label: "robot-source distance", x: t, y: dist, color: COLORS[1], dash: "6 4" },
      { label: "trajectory error", x: t, y: column(input.table, "traj_error"), color: COLORS[0] },
    ],
  };
}

export function render(kind: PlotKind, inputs: PlotInput[], ref?: number): string {
  return renderChart(buildChart(kind, inputs, ref));
}
