// Mesh viewport: renders the service payload verbatim (flat typed
// arrays straight into GPU buffers, no geometric post-processing).

import * as THREE from "three";
import type { MeshPayload } from "./api.js";

export class MeshViewer {
  private renderer: THREE.WebGLRenderer;
  private scene: THREE.Scene;
  private camera: THREE.PerspectiveCamera;
  private mesh: THREE.Mesh | null = null;
  private dragging = false;
  private lastX = 0;
  private lastY = 0;
  private rotX = -0.4;
  private rotY = 0.7;

  constructor(private container: HTMLElement) {
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(container.clientWidth, container.clientHeight);
    container.appendChild(this.renderer.domElement);

    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x10141a);
    this.camera = new THREE.PerspectiveCamera(45, container.clientWidth / container.clientHeight, 0.01, 20);
    this.camera.position.set(0, 0, 3);

    const key = new THREE.DirectionalLight(0xffffff, 2.2);
    key.position.set(2, 2, 3);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0x8899bb, 0.8);
    fill.position.set(-2, -1, -2);
    this.scene.add(fill);
    this.scene.add(new THREE.AmbientLight(0x404040));

    container.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
    });
    window.addEventListener("pointerup", () => (this.dragging = false));
    window.addEventListener("pointermove", (e) => {
      if (!this.dragging) return;
      this.rotY += (e.clientX - this.lastX) * 0.01;
      this.rotX += (e.clientY - this.lastY) * 0.01;
      this.lastX = e.clientX;
      this.lastY = e.clientY;
      this.applyRotation();
      this.render();
    });
    window.addEventListener("resize", () => this.resize());
  }

  setMesh(payload: MeshPayload): void {
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.Float32BufferAttribute(payload.positions, 3));
    geometry.setIndex(payload.indices);
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      color: 0x7fb2d9,
      metalness: 0.15,
      roughness: 0.55,
      side: THREE.DoubleSide,
    });
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
    }
    this.mesh = new THREE.Mesh(geometry, material);
    this.applyRotation();
    this.scene.add(this.mesh);
    this.render();
  }

  private applyRotation(): void {
    if (!this.mesh) return;
    this.mesh.rotation.set(this.rotX - Math.PI / 2, 0, 0);
    this.mesh.rotation.y = 0;
    this.mesh.rotateOnWorldAxis(new THREE.Vector3(0, 1, 0), this.rotY);
  }

  private resize(): void {
    const w = this.container.clientWidth;
    const h = this.container.clientHeight;
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
    this.renderer.setSize(w, h);
    this.render();
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }
}
