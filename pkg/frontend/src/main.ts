import { ApiClient } from './api';
import { AnnotatorApp } from './app';

const params = new URLSearchParams(window.location.search);
const campaign = params.get('campaign') ?? 'sim';
const annotator = params.get('annotator') ?? `web-${Date.now()}`;
const base = params.get('api') ?? '';

const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');

const app = new AnnotatorApp(root, new ApiClient(base), campaign, annotator);
void app.start();
