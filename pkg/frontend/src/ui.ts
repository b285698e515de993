// DOM rendering for the annotator flow. Deliberate constraints:
//  - the task view has no volume control of any kind (clips must be judged
//    at a fixed, comparable level), so audio elements are created without
//    browser controls and no slider is ever rendered;
//  - choice buttons stay disabled until both clips have played to the end;
//  - a blocked session renders a terminal screen with no way onward.

import { TaskView } from './api';
import { PlaybackGate } from './gate';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export interface TaskHandlers {
  onChoose: (clipId: string) => void;
  audioUrl: (clipId: string) => string;
}

export function renderTutorial(root: HTMLElement, onDone: () => void): void {
  root.replaceChildren();
  const box = el('div', 'tutorial');
  box.appendChild(el('h1', undefined, 'How this works'));
  const steps = el('ol', 'tutorial-steps');
  for (const text of [
    'You will hear two short music clips per task.',
    'Listen to both clips all the way through.',
    'Pick the clip that fits the asked quality more strongly.',
    'The first five tasks are a practice quiz; most of them must be right.',
  ]) {
    steps.appendChild(el('li', undefined, text));
  }
  box.appendChild(steps);
  const next = el('button', 'primary', 'Got it');
  next.addEventListener('click', onDone);
  box.appendChild(next);
  root.appendChild(box);
}

export function renderHeadphoneCheck(root: HTMLElement, onConfirm: () => void): void {
  root.replaceChildren();
  const box = el('div', 'headphone-check');
  box.appendChild(el('h1', undefined, 'Headphones required'));
  box.appendChild(
    el('p', undefined,
       'Please put on headphones and set a comfortable level now. ' +
       'The volume cannot be changed during the task.'),
  );
  const confirm = el('button', 'primary', 'I am wearing headphones');
  confirm.addEventListener('click', onConfirm);
  box.appendChild(confirm);
  root.appendChild(box);
}

export function renderTask(
  root: HTMLElement,
  task: TaskView,
  handlers: TaskHandlers,
): PlaybackGate {
  root.replaceChildren();
  const gate = new PlaybackGate();
  const box = el('div', 'task');

  if (task.phase === 'quiz' && task.quiz_progress) {
    box.appendChild(el('p', 'quiz-progress', `Practice ${task.quiz_progress}`));
  }
  box.appendChild(el('h1', undefined, 'Which clip is stronger?'));
  box.appendChild(el('p', 'hint', 'Play both clips to the end to unlock your choice.'));

  const chooseButtons: HTMLButtonElement[] = [];
  const refresh = () => {
    for (const btn of chooseButtons) btn.disabled = !gate.bothPlayed;
  };

  const sides: Array<['a' | 'b', string]> = [
    ['a', task.clip_a as string],
    ['b', task.clip_b as string],
  ];
  for (const [which, clipId] of sides) {
    const panel = el('div', 'clip-panel');
    panel.dataset.clip = clipId;

    const audio = el('audio');
    audio.src = handlers.audioUrl(clipId);
    audio.controls = false; // fixed level: no browser chrome, no volume UI
    audio.preload = 'auto';
    audio.addEventListener('ended', () => {
      gate.markEnded(which);
      refresh();
    });
    panel.appendChild(audio);

    const play = el('button', 'play', `Play clip ${which.toUpperCase()}`);
    play.addEventListener('click', () => {
      void audio.play();
    });
    panel.appendChild(play);

    const choose = el('button', 'choose', `Choose ${which.toUpperCase()}`);
    choose.disabled = true;
    choose.addEventListener('click', () => handlers.onChoose(clipId));
    chooseButtons.push(choose);
    panel.appendChild(choose);

    box.appendChild(panel);
  }

  root.appendChild(box);
  return gate;
}

export function renderBlocked(root: HTMLElement): void {
  root.replaceChildren();
  const box = el('div', 'blocked terminal');
  box.appendChild(el('h1', undefined, 'Session ended'));
  box.appendChild(
    el('p', undefined,
       'Too many check questions were missed, so this session has been ' +
       'closed. Thank you for your time.'),
  );
  // terminal screen: deliberately no buttons, links, or retry affordances
  root.appendChild(box);
}

export function renderDone(root: HTMLElement, message: string): void {
  root.replaceChildren();
  const box = el('div', 'done');
  box.appendChild(el('h1', undefined, 'All done'));
  box.appendChild(el('p', undefined, message));
  root.appendChild(box);
}
