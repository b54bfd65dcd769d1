// Inline SVG sparkline for a user's binned activity series.

export function sparklineSvg(values: number[], width = 140, height = 28): string {
  if (values.length === 0) {
    return `<svg class="sparkline" width="${width}" height="${height}"></svg>`;
  }
  const max = Math.max(...values, 1e-9);
  const step = width / Math.max(values.length - 1, 1);
  const points = values
    .map((v, i) => `${(i * step).toFixed(1)},${(height - (v / max) * (height - 2) - 1).toFixed(1)}`)
    .join(" ");
  return (
    `<svg class="sparkline" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="1" points="${points}"/></svg>`
  );
}
