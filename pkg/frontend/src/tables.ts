// Placement and FL round tables. Rows mirror API fields; the placement
// table shows optimistic rows as "pending" until the event frame lands.

import type { DashboardStore } from "./store.js";
import type { FlClientRecord } from "./types.js";

export function renderPlacementTable(el: HTMLElement, store: DashboardStore): void {
  const rows = store.placementTable();
  const metricsLine = `${rows.length} running`;
  const body = rows
    .map(
      (r) =>
        `<tr${r.pending ? ' class="pending"' : ""}><td>${r.id}</td>` +
        `<td>${r.device}</td><td>${r.pending ? "pending" : "ok"}</td></tr>`
    )
    .join("");
  el.innerHTML =
    `<div class="table-caption">${metricsLine}</div>` +
    `<table><thead><tr><th>stream</th><th>device</th><th>state</th></tr></thead>` +
    `<tbody>${body}</tbody></table>`;
}

export function renderStreamPicker(
  el: HTMLElement,
  store: DashboardStore,
  selected: Set<string>
): void {
  const items = store.state.streams
    .map((s) => {
      const checked = selected.has(s.id) ? " checked" : "";
      const badge = s.running ? "●" : "○";
      return (
        `<label class="pick"><input type="checkbox" data-stream="${s.id}"${checked}/>` +
        `${badge} ${s.id} <small>@${s.junction}</small></label>`
      );
    })
    .join("");
  el.innerHTML = items;
}

export function renderFlTable(el: HTMLElement, store: DashboardStore): void {
  const { accuracy_by_round, records } = store.state.flRounds;
  if (records.length === 0) {
    el.innerHTML = "<em>no federated rounds reported yet</em>";
    return;
  }
  const clients = records.filter((r): r is FlClientRecord => "client_id" in r);
  const lastRound = Math.max(...clients.map((r) => r.round));
  const latest = clients.filter((r) => r.round === lastRound);
  const rows = latest
    .map(
      (r) =>
        `<tr><td>${r.client_id}</td><td>${r.tier}</td><td>${r.n_streams}</td>` +
        `<td>${r.n_frames}</td><td>${r.n_samples}</td>` +
        `<td>${r.train_time_s.toFixed(2)}s</td></tr>`
    )
    .join("");
  const acc = accuracy_by_round.map((a, i) => `r${i}: ${(a * 100).toFixed(1)}%`).join("  ");
  el.innerHTML =
    `<div class="table-caption">global accuracy ${acc}</div>` +
    `<table><thead><tr><th>client</th><th>tier</th><th>streams</th>` +
    `<th>frames</th><th>samples</th><th>train</th></tr></thead><tbody>${rows}</tbody></table>`;
}

export function renderNotices(el: HTMLElement, store: DashboardStore): void {
  el.innerHTML = store.state.notices
    .slice(-5)
    .map((n) => `<div class="notice ${n.kind}">${n.text}</div>`)
    .join("");
}
