/** WebGL renderer for layered-mesh scenes.
 *
 * Layer index 0 is the nearest surface, so layers draw back-to-front from
 * the last index down to 0 with straight-alpha over-blending. The depth
 * test runs within each layer draw and the depth buffer is cleared between
 * layers: nearest fragment per layer, then layer-index compose across
 * layers, matching the CPU reference composition.
 */

import type { SceneData } from "./format.js";
import { buildSceneGeometry, type SceneGeometry } from "./mesh.js";
import { modelViewFromPose, projectionFromIntrinsics, type Pose } from "./math.js";

const VERTEX_SHADER = `
attribute vec3 aPosition;
attribute vec2 aTexCoord;
uniform mat4 uModelView;
uniform mat4 uProjection;
varying vec2 vTexCoord;
void main() {
  vTexCoord = aTexCoord;
  gl_Position = uProjection * (uModelView * vec4(aPosition, 1.0));
}
`;

const FRAGMENT_SHADER = `
precision mediump float;
varying vec2 vTexCoord;
uniform sampler2D uTexture;
uniform int uMode;
uniform vec4 uLineColor;

vec3 heatRamp(float t) {
  return clamp(vec3(3.0 * t - 1.5, 3.0 * t - 0.75, 1.5 - 3.0 * abs(t - 0.33)), 0.0, 1.0);
}

void main() {
  if (uMode == 2) {
    gl_FragColor = uLineColor;
  } else {
    vec4 texel = texture2D(uTexture, vTexCoord);
    if (uMode == 1) {
      gl_FragColor = vec4(heatRamp(texel.a), texel.a);
    } else {
      gl_FragColor = texel;
    }
  }
}
`;

export class GlError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "GlError";
  }
}

function compileShader(gl: WebGLRenderingContext, kind: number, source: string): WebGLShader {
  const shader = gl.createShader(kind);
  if (!shader) {
    throw new GlError("shader allocation failed");
  }
  gl.shaderSource(shader, source);
  gl.compileShader(shader);
  if (!gl.getShaderParameter(shader, gl.COMPILE_STATUS)) {
    throw new GlError(`shader compile failed: ${gl.getShaderInfoLog(shader)}`);
  }
  return shader;
}

function linkProgram(gl: WebGLRenderingContext): WebGLProgram {
  const program = gl.createProgram();
  if (!program) {
    throw new GlError("program allocation failed");
  }
  gl.attachShader(program, compileShader(gl, gl.VERTEX_SHADER, VERTEX_SHADER));
  gl.attachShader(program, compileShader(gl, gl.FRAGMENT_SHADER, FRAGMENT_SHADER));
  gl.linkProgram(program);
  if (!gl.getProgramParameter(program, gl.LINK_STATUS)) {
    throw new GlError(`program link failed: ${gl.getProgramInfoLog(program)}`);
  }
  return program;
}

interface LayerBuffers {
  positions: WebGLBuffer;
  texCoords: WebGLBuffer;
  texture: WebGLTexture;
}

export interface ViewerToggles {
  layerVisible: boolean[];
  wireframe: boolean;
  alphaHeatmap: boolean;
}

/** GPU-resident scene plus overlay toggles; one per loaded archive. */
export class ViewerState {
  readonly scene: SceneData;
  readonly geometry: SceneGeometry;
  readonly toggles: ViewerToggles;
  private readonly gl: WebGLRenderingContext;
  private readonly program: WebGLProgram;
  private readonly layers: LayerBuffers[] = [];
  private readonly triangleIndex: WebGLBuffer;
  private readonly edgeIndex: WebGLBuffer;
  private readonly aPosition: number;
  private readonly aTexCoord: number;
  private readonly uModelView: WebGLUniformLocation;
  private readonly uProjection: WebGLUniformLocation;
  private readonly uTexture: WebGLUniformLocation;
  private readonly uMode: WebGLUniformLocation;
  private readonly uLineColor: WebGLUniformLocation;
  private readonly projection: Float32Array;

  constructor(gl: WebGLRenderingContext, scene: SceneData) {
    this.gl = gl;
    this.scene = scene;
    this.geometry = buildSceneGeometry(scene);
    this.toggles = {
      layerVisible: new Array(scene.manifest.layerCount).fill(true),
      wireframe: false,
      alphaHeatmap: false,
    };
    this.program = linkProgram(gl);
    this.aPosition = gl.getAttribLocation(this.program, "aPosition");
    this.aTexCoord = gl.getAttribLocation(this.program, "aTexCoord");
    this.uModelView = this.uniform("uModelView");
    this.uProjection = this.uniform("uProjection");
    this.uTexture = this.uniform("uTexture");
    this.uMode = this.uniform("uMode");
    this.uLineColor = this.uniform("uLineColor");

    const near = Math.max(scene.manifest.depthRange[0] / 10, 1e-4);
    const far = scene.manifest.depthRange[1] * 50;
    this.projection = projectionFromIntrinsics(scene.manifest.intrinsics, near, far);

    this.triangleIndex = this.indexBuffer(this.geometry.triangles);
    this.edgeIndex = this.indexBuffer(this.geometry.edges);
    const m = scene.manifest;
    for (let j = 0; j < m.layerCount; j++) {
      const geo = this.geometry.layers[j];
      this.layers.push({
        positions: this.arrayBuffer(new Float32Array(geo.positions)),
        texCoords: this.arrayBuffer(geo.texCoords),
        texture: this.layerTexture(j),
      });
    }
  }

  private uniform(name: string): WebGLUniformLocation {
    const loc = this.gl.getUniformLocation(this.program, name);
    if (!loc) {
      throw new GlError(`uniform ${name} not found`);
    }
    return loc;
  }

  private arrayBuffer(data: Float32Array): WebGLBuffer {
    const gl = this.gl;
    const buffer = gl.createBuffer();
    if (!buffer) {
      throw new GlError("vertex buffer allocation failed");
    }
    gl.bindBuffer(gl.ARRAY_BUFFER, buffer);
    gl.bufferData(gl.ARRAY_BUFFER, data, gl.STATIC_DRAW);
    return buffer;
  }

  private indexBuffer(indices: Uint32Array): WebGLBuffer {
    const gl = this.gl;
    if (!gl.getExtension("OES_element_index_uint")) {
      const max = indices.reduce((a, b) => Math.max(a, b), 0);
      if (max > 0xffff) {
        throw new GlError("grid too large for 16-bit indices on this GPU");
      }
    }
    const buffer = gl.createBuffer();
    if (!buffer) {
      throw new GlError("index buffer allocation failed");
    }
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, buffer);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, indices, gl.STATIC_DRAW);
    return buffer;
  }

  private layerTexture(layer: number): WebGLTexture {
    const gl = this.gl;
    const m = this.scene.manifest;
    const texture = gl.createTexture();
    if (!texture) {
      throw new GlError("texture allocation failed");
    }
    const plane = this.scene.textures.subarray(
      layer * m.textureHeight * m.textureWidth * 4,
      (layer + 1) * m.textureHeight * m.textureWidth * 4
    );
    gl.bindTexture(gl.TEXTURE_2D, texture);
    gl.texImage2D(
      gl.TEXTURE_2D, 0, gl.RGBA, m.textureWidth, m.textureHeight, 0,
      gl.RGBA, gl.UNSIGNED_BYTE, plane
    );
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.LINEAR);
    gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.LINEAR);
    return texture;
  }

  private bindLayer(buffers: LayerBuffers): void {
    const gl = this.gl;
    gl.bindBuffer(gl.ARRAY_BUFFER, buffers.positions);
    gl.enableVertexAttribArray(this.aPosition);
    gl.vertexAttribPointer(this.aPosition, 3, gl.FLOAT, false, 0, 0);
    gl.bindBuffer(gl.ARRAY_BUFFER, buffers.texCoords);
    gl.enableVertexAttribArray(this.aTexCoord);
    gl.vertexAttribPointer(this.aTexCoord, 2, gl.FLOAT, false, 0, 0);
    gl.activeTexture(gl.TEXTURE0);
    gl.bindTexture(gl.TEXTURE_2D, buffers.texture);
    gl.uniform1i(this.uTexture, 0);
  }

  /** Draw one frame at the given pose. */
  frame(pose: Pose): void {
    const gl = this.gl;
    gl.viewport(0, 0, gl.drawingBufferWidth, gl.drawingBufferHeight);
    gl.clearColor(0.08, 0.08, 0.1, 1.0);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.useProgram(this.program);
    gl.uniformMatrix4fv(this.uProjection, false, this.projection);
    gl.uniformMatrix4fv(this.uModelView, false, modelViewFromPose(pose));
    gl.disable(gl.CULL_FACE);
    gl.enable(gl.BLEND);
    gl.blendFuncSeparate(gl.SRC_ALPHA, gl.ONE_MINUS_SRC_ALPHA, gl.ONE, gl.ONE_MINUS_SRC_ALPHA);

    const triCount = this.geometry.triangles.length;
    for (let j = this.scene.manifest.layerCount - 1; j >= 0; j--) {
      if (!this.toggles.layerVisible[j]) {
        continue;
      }
      this.bindLayer(this.layers[j]);
      gl.enable(gl.DEPTH_TEST);
      gl.clear(gl.DEPTH_BUFFER_BIT);
      gl.uniform1i(this.uMode, this.toggles.alphaHeatmap ? 1 : 0);
      gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.triangleIndex);
      gl.drawElements(gl.TRIANGLES, triCount, gl.UNSIGNED_INT, 0);
    }

    if (this.toggles.wireframe) {
      gl.disable(gl.DEPTH_TEST);
      gl.uniform1i(this.uMode, 2);
      gl.uniform4f(this.uLineColor, 0.2, 0.9, 0.4, 0.35);
      for (let j = this.scene.manifest.layerCount - 1; j >= 0; j--) {
        if (!this.toggles.layerVisible[j]) {
          continue;
        }
        this.bindLayer(this.layers[j]);
        gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, this.edgeIndex);
        gl.drawElements(gl.LINES, this.geometry.edges.length, gl.UNSIGNED_INT, 0);
      }
      gl.enable(gl.DEPTH_TEST);
    }
  }

  dispose(): void {
    const gl = this.gl;
    for (const layer of this.layers) {
      gl.deleteBuffer(layer.positions);
      gl.deleteBuffer(layer.texCoords);
      gl.deleteTexture(layer.texture);
    }
    gl.deleteBuffer(this.triangleIndex);
    gl.deleteBuffer(this.edgeIndex);
    gl.deleteProgram(this.program);
  }
}
