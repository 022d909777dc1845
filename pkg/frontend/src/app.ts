/** DOM layer: renders the annotation queue view model into #app.
 *
 * Interaction model is span-first: click a chip to anchor a selection,
 * shift-click (or click again further right) to extend it, then pick an
 * attribute button to tag the whole span. Hovering a token shades the
 * other chips by that token's attention row.
 */

import { ApiClient } from "./api.js";
import { AnnotationQueue, type AnnotationCard } from "./viewmodel.js";

interface Selection {
  card: AnnotationCard;
  start: number;
  end: number;
}

export class App {
  private queue: AnnotationQueue;
  private selection: Selection | null = null;
  private showAttention = true;

  constructor(
    private readonly root: HTMLElement,
    baseUrl: string,
    private readonly projectId: string,
  ) {
    this.queue = new AnnotationQueue(new ApiClient(baseUrl), projectId);
  }

  async refresh(): Promise<void> {
    const view = await this.queue.fetchQueue();
    this.root.textContent = "";
    const heading = document.createElement("h2");
    heading.textContent = `project ${this.projectId}: ${view.status}`;
    this.root.appendChild(heading);
    if (view.kind === "training") {
      this.root.appendChild(this.banner("training committee… queue disabled"));
      setTimeout(() => void this.refresh(), 2000);
      return;
    }
    if (view.kind === "idle") {
      this.root.appendChild(this.banner("no round running"));
      return;
    }
    if (view.kind === "done") {
      this.root.appendChild(
        this.banner(view.error ? `stopped: ${view.error}` : "all rounds done"),
      );
      return;
    }
    for (const card of view.cards) {
      this.root.appendChild(this.renderCard(card));
    }
  }

  private banner(text: string): HTMLElement {
    const div = document.createElement("div");
    div.className = "banner";
    div.textContent = text;
    return div;
  }

  private renderCard(card: AnnotationCard): HTMLElement {
    const box = document.createElement("section");
    box.className = `card status-${card.status}`;
    box.dataset.sampleId = card.sampleId;

    const head = document.createElement("header");
    head.textContent =
      `${card.sampleId} (score ${card.strategyScore.toFixed(3)})`;
    box.appendChild(head);

    const chips = document.createElement("div");
    chips.className = "chips";
    card.tokens.forEach((token, i) => {
      const chip = document.createElement("button");
      chip.className = "chip";
      chip.dataset.index = String(i);
      chip.textContent = `${token}\n${card.tags[i] ?? "·"}`;
      if (card.errorPosition === i) chip.classList.add("error");
      chip.addEventListener("click", (event) =>
        this.onChipClick(card, i, (event as MouseEvent).shiftKey, box),
      );
      chip.addEventListener("mouseenter", () =>
        this.shadeAttention(card, i, chips),
      );
      chips.appendChild(chip);
    });
    box.appendChild(chips);

    const controls = document.createElement("div");
    controls.className = "controls";
    for (const attribute of this.queue.scheme?.attributes ?? []) {
      const btn = document.createElement("button");
      btn.textContent = attribute === "" ? "value" : attribute;
      btn.addEventListener("click", () => {
        if (!this.selection || this.selection.card !== card) return;
        this.queue.applySpan(
          card,
          this.selection.start,
          this.selection.end + 1,
          attribute,
        );
        this.selection = null;
        this.repaint(box, card);
      });
      controls.appendChild(btn);
    }
    const outside = document.createElement("button");
    outside.textContent = "outside";
    outside.addEventListener("click", () => {
      if (!this.selection || this.selection.card !== card) return;
      this.queue.markOutside(card, this.selection.start, this.selection.end + 1);
      this.selection = null;
      this.repaint(box, card);
    });
    controls.appendChild(outside);

    const submit = document.createElement("button");
    submit.className = "submit";
    submit.textContent = "submit";
    submit.addEventListener("click", () => {
      void this.queue.submit(card).then(() => this.repaint(box, card));
    });
    controls.appendChild(submit);

    const toggle = document.createElement("label");
    const box2 = document.createElement("input");
    box2.type = "checkbox";
    box2.checked = this.showAttention;
    box2.addEventListener("change", () => {
      this.showAttention = box2.checked;
    });
    toggle.appendChild(box2);
    toggle.appendChild(document.createTextNode(" attention overlay"));
    controls.appendChild(toggle);

    box.appendChild(controls);

    const warn = document.createElement("ul");
    warn.className = "warnings";
    for (const message of card.warnings) {
      const li = document.createElement("li");
      li.textContent = message;
      warn.appendChild(li);
    }
    box.appendChild(warn);
    if (card.errorDetail) {
      box.appendChild(this.banner(card.errorDetail));
    }
    return box;
  }

  private onChipClick(
    card: AnnotationCard,
    index: number,
    extend: boolean,
    box: HTMLElement,
  ): void {
    if (
      extend &&
      this.selection &&
      this.selection.card === card &&
      index >= this.selection.start
    ) {
      this.selection.end = index;
    } else {
      this.selection = { card, start: index, end: index };
    }
    const chips = box.querySelectorAll<HTMLElement>(".chip");
    chips.forEach((chip, i) => {
      chip.classList.toggle(
        "selected",
        this.selection !== null &&
          i >= this.selection.start &&
          i <= this.selection.end,
      );
    });
  }

  private shadeAttention(
    card: AnnotationCard,
    row: number,
    chips: HTMLElement,
  ): void {
    if (!this.showAttention) return;
    chips.querySelectorAll<HTMLElement>(".chip").forEach((chip, col) => {
      const a = this.queue.attentionIntensity(card, row, col);
      chip.style.background = `rgba(255, 160, 0, ${a.toFixed(3)})`;
    });
  }

  private repaint(box: HTMLElement, card: AnnotationCard): void {
    const fresh = this.renderCard(card);
    box.replaceWith(fresh);
  }
}

export function mount(): void {
  const params = new URLSearchParams(window.location.search);
  const project = params.get("project");
  const base = params.get("api") ?? "";
  const root = document.getElementById("app");
  if (!root || !project) {
    document.body.textContent = "usage: index.html?project=<id>[&api=<url>]";
    return;
  }
  const app = new App(root, base, project);
  void app.refresh();
}
