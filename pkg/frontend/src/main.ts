/** Browser entry: archive loading UI, camera interaction, render loop.
 *
 * The render loop runs every animation frame; archive fetches happen
 * asynchronously and swap the viewer state in when ready, so interaction
 * never blocks on the network.
 */

import { FormatError, loadArchive, loadFromFiles, type SceneData } from "./format.js";
import { ViewerState } from "./gl.js";
import {
  defaultOrbit,
  defaultSlider,
  flyStep,
  orbitDolly,
  orbitDrag,
  orbitPose,
  sliderOver,
  type OrbitState,
  type SliderConfig,
} from "./camera.js";
import { clonePose, identityPose, type Pose } from "./math.js";

type CameraMode = "orbit" | "fly";

interface AppState {
  viewer: ViewerState | null;
  mode: CameraMode;
  orbit: OrbitState;
  flyPose: Pose;
  slider: SliderConfig;
  sliderPosition: number;
  keys: Set<string>;
  dragging: boolean;
}

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

function sceneMidDistance(scene: SceneData): number {
  const [near, far] = scene.manifest.depthRange;
  return (near + far) / 2;
}

function setStatus(text: string, isError = false): void {
  const el = byId<HTMLDivElement>("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function rebuildLayerToggles(state: AppState): void {
  const holder = byId<HTMLDivElement>("layer-toggles");
  holder.textContent = "";
  if (!state.viewer) {
    return;
  }
  state.viewer.toggles.layerVisible.forEach((visible, j) => {
    const label = document.createElement("label");
    const box = document.createElement("input");
    box.type = "checkbox";
    box.checked = visible;
    box.addEventListener("change", () => {
      if (state.viewer) {
        state.viewer.toggles.layerVisible[j] = box.checked;
      }
    });
    label.appendChild(box);
    label.appendChild(document.createTextNode(` layer ${j}`));
    holder.appendChild(label);
  });
}

function adoptScene(state: AppState, gl: WebGLRenderingContext, scene: SceneData): void {
  state.viewer?.dispose();
  state.viewer = new ViewerState(gl, scene);
  state.orbit = defaultOrbit([0, 0, sceneMidDistance(scene)], sceneMidDistance(scene));
  state.flyPose = identityPose();
  rebuildLayerToggles(state);
  const m = scene.manifest;
  setStatus(
    `loaded: ${m.layerCount} layers, grid ${m.gridHeight}x${m.gridWidth}, ` +
      `texture ${m.textureHeight}x${m.textureWidth}`
  );
}

function currentPose(state: AppState): Pose {
  const base = state.mode === "orbit" ? orbitPose(state.orbit) : clonePose(state.flyPose);
  return sliderOver(base, state.slider, state.sliderPosition);
}

function applyFlyKeys(state: AppState, dt: number): void {
  if (state.mode !== "fly" || state.keys.size === 0) {
    return;
  }
  const speed = 1.5 * dt;
  const move: [number, number, number] = [0, 0, 0];
  if (state.keys.has("w")) move[2] += speed;
  if (state.keys.has("s")) move[2] -= speed;
  if (state.keys.has("a")) move[0] -= speed;
  if (state.keys.has("d")) move[0] += speed;
  if (state.keys.has("q")) move[1] -= speed;
  if (state.keys.has("e")) move[1] += speed;
  if (move[0] !== 0 || move[1] !== 0 || move[2] !== 0) {
    state.flyPose = flyStep(state.flyPose, { move, yaw: 0, pitch: 0 });
  }
}

function wireInputs(state: AppState, canvas: HTMLCanvasElement, gl: WebGLRenderingContext): void {
  canvas.addEventListener("mousedown", () => {
    state.dragging = true;
  });
  window.addEventListener("mouseup", () => {
    state.dragging = false;
  });
  window.addEventListener("mousemove", (ev) => {
    if (!state.dragging) {
      return;
    }
    const dYaw = ev.movementX * 0.005;
    const dPitch = ev.movementY * 0.005;
    if (state.mode === "orbit") {
      state.orbit = orbitDrag(state.orbit, dYaw, dPitch);
    } else {
      state.flyPose = flyStep(state.flyPose, { move: [0, 0, 0], yaw: dYaw, pitch: dPitch });
    }
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    if (state.mode === "orbit") {
      state.orbit = orbitDolly(state.orbit, Math.exp(ev.deltaY * 0.001));
    }
  });
  window.addEventListener("keydown", (ev) => {
    state.keys.add(ev.key.toLowerCase());
  });
  window.addEventListener("keyup", (ev) => {
    state.keys.delete(ev.key.toLowerCase());
  });

  byId<HTMLSelectElement>("camera-mode").addEventListener("change", (ev) => {
    state.mode = (ev.target as HTMLSelectElement).value as CameraMode;
  });
  const slider = byId<HTMLInputElement>("baseline-slider");
  const sliderReadout = byId<HTMLSpanElement>("baseline-readout");
  slider.addEventListener("input", () => {
    state.sliderPosition = Number(slider.value);
    const mag = state.sliderPosition * state.slider.maxMagnification;
    sliderReadout.textContent = `${mag.toFixed(2)}x`;
  });
  byId<HTMLInputElement>("baseline-length").addEventListener("change", (ev) => {
    const value = Number((ev.target as HTMLInputElement).value);
    if (Number.isFinite(value)) {
      state.slider = defaultSlider(value, state.slider.maxMagnification);
    }
  });
  byId<HTMLInputElement>("wireframe").addEventListener("change", (ev) => {
    if (state.viewer) {
      state.viewer.toggles.wireframe = (ev.target as HTMLInputElement).checked;
    }
  });
  byId<HTMLInputElement>("alpha-heatmap").addEventListener("change", (ev) => {
    if (state.viewer) {
      state.viewer.toggles.alphaHeatmap = (ev.target as HTMLInputElement).checked;
    }
  });

  byId<HTMLButtonElement>("load-url").addEventListener("click", () => {
    const url = byId<HTMLInputElement>("archive-url").value.trim();
    if (!url) {
      setStatus("enter an archive URL first", true);
      return;
    }
    setStatus(`loading ${url} ...`);
    loadArchive(url)
      .then((scene) => adoptScene(state, gl, scene))
      .catch((err) => {
        setStatus(err instanceof FormatError ? err.message : `load failed: ${err}`, true);
      });
  });
  byId<HTMLInputElement>("archive-files").addEventListener("change", (ev) => {
    const files = (ev.target as HTMLInputElement).files;
    if (!files || files.length === 0) {
      return;
    }
    setStatus("reading picked files ...");
    loadFromFiles(Array.from(files))
      .then((scene) => adoptScene(state, gl, scene))
      .catch((err) => {
        setStatus(err instanceof FormatError ? err.message : `load failed: ${err}`, true);
      });
  });
}

function start(): void {
  const canvas = byId<HTMLCanvasElement>("view");
  const gl = canvas.getContext("webgl", { alpha: false, antialias: false });
  if (!gl) {
    setStatus("WebGL is not available in this browser", true);
    return;
  }
  const state: AppState = {
    viewer: null,
    mode: "orbit",
    orbit: defaultOrbit([0, 0, 4], 4),
    flyPose: identityPose(),
    slider: defaultSlider(),
    sliderPosition: 0,
    keys: new Set(),
    dragging: false,
  };
  wireInputs(state, canvas, gl);

  const frameTime = byId<HTMLSpanElement>("frame-time");
  let last = performance.now();
  let smoothed = 0;
  const loop = (now: number) => {
    const dt = (now - last) / 1000;
    last = now;
    applyFlyKeys(state, dt);
    if (state.viewer) {
      const begin = performance.now();
      state.viewer.frame(currentPose(state));
      const took = performance.now() - begin;
      smoothed = smoothed === 0 ? took : smoothed * 0.9 + took * 0.1;
      frameTime.textContent = `${smoothed.toFixed(2)} ms (${(1000 / Math.max(smoothed, 1e-3)).toFixed(0)} fps)`;
    }
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);

  const params = new URLSearchParams(window.location.search);
  const auto = params.get("scene");
  if (auto) {
    setStatus(`loading ${auto} ...`);
    loadArchive(auto)
      .then((scene) => adoptScene(state, gl, scene))
      .catch((err) => {
        setStatus(err instanceof FormatError ? err.message : `load failed: ${err}`, true);
      });
  }
}

start();
