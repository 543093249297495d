"""Graphe unifié livré par défaut et menu de commandes associé.

Le chemin principal traverse les états porteurs de commandes (ceux du menu) ;
chaque état du chemin possède, jusqu'à l'état suivant du chemin, une plage
d'états transitoires : un état d'erreur, un état de débogage puis des états
« sortie annexe ». Les états transitoires ramènent à l'état du chemin ; l'arête
de retour occupe l'emplacement state % (n + 1), n étant le nombre d'autres arêtes.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from app.core.workflow_graph import DEFAULT_STEP_REWARD, Transition, WorkflowGraph

NUM_STATES = 67
NUM_ACTIONS = 10
TERMINAL_STATE = 66
TERMINAL_REWARD = 2.0
RISKY_SUCCESS = 0.8

PROGRESS = "progress"
ERROR = "error"
SIDE = "side"
STAY = "stay"
RESET = "reset"

MILESTONES = {
    5: "WinPmem installed",
    10: "memory acquired",
    15: "OS identified",
    66: "investigation complete",
}


@dataclass(frozen=True)
class WorkflowStep:
    """État du chemin principal et son menu de commandes (rôle, gabarit)."""
    state: int
    phase: str
    risky: bool
    reset_to: Optional[int]
    commands: Tuple[Tuple[str, str], ...]


VOL = "python3 vol.py -f {image}"

WORKFLOW: Tuple[WorkflowStep, ...] = (
    WorkflowStep(0, "tool acquisition", True, None, (
        (PROGRESS, "git clone https://github.com/Velocidex/WinPmem.git {outdir}/WinPmem"),
        (ERROR, "powershell -Command \"Invoke-WebRequest -Uri https://github.com/Velocidex/WinPmem/releases/latest -OutFile {outdir}/winpmem.zip\""),
        (STAY, "git --version"),
        (STAY, "powershell -Command \"$PSVersionTable.PSVersion\""),
        (STAY, "dir {outdir}"),
    )),
    WorkflowStep(2, "WinPmem installation", True, 0, (
        (STAY, "dir {outdir}/WinPmem"),
        (PROGRESS, "copy {outdir}/WinPmem/winpmem_mini_x64_rc2.exe C:/Tools/winpmem.exe"),
        (ERROR, "powershell -Command \"Start-Process C:/Tools/winpmem.exe -ArgumentList '--install'\""),
        (STAY, "certutil -hashfile C:/Tools/winpmem.exe SHA256"),
        (STAY, "whoami /groups"),
        (RESET, "rmdir /s /q {outdir}/WinPmem"),
    )),
    WorkflowStep(5, "live memory acquisition", True, 0, (
        (STAY, "C:/Tools/winpmem.exe --help"),
        (SIDE, "fsutil volume diskfree C:"),
        (PROGRESS, "C:/Tools/winpmem.exe {image}"),
        (ERROR, "C:/Tools/winpmem.exe --format raw --output {image}"),
        (SIDE, "wmic memorychip get capacity"),
        (RESET, "del C:/Tools/winpmem.exe"),
    )),
    WorkflowStep(10, "system information and registry", False, 5, (
        (PROGRESS, "git clone https://github.com/volatilityfoundation/volatility3.git"),
        (STAY, "systeminfo > {outdir}/systeminfo.txt"),
        (STAY, "reg query \"HKLM/SOFTWARE/Microsoft/Windows NT/CurrentVersion\""),
        (ERROR, "reg export HKLM/SYSTEM {outdir}/system.reg"),
        (STAY, "hostname"),
        (STAY, "wmic os get Caption,Version,BuildNumber"),
        (STAY, "reg query HKLM/SOFTWARE/Microsoft/Windows/CurrentVersion/Run"),
        (RESET, "del {image}"),
    )),
    WorkflowStep(13, "operating system identification", True, 10, (
        (STAY, "pip3 install -r volatility3/requirements.txt"),
        (PROGRESS, VOL + " windows.info"),
        (ERROR, "python2 vol.py -f {image} imageinfo"),
        (STAY, "python3 vol.py -h"),
        (STAY, "ls -la {image}"),
        (STAY, "file {image}"),
        (RESET, "rm -rf volatility3"),
    )),
    WorkflowStep(15, "process information", False, 10, (
        (PROGRESS, VOL + " windows.pslist > {outdir}/pslist.txt"),
        (SIDE, VOL + " windows.pstree > {outdir}/pstree.txt"),
        (SIDE, VOL + " windows.psscan > {outdir}/psscan.txt"),
        (ERROR, "python3 vol.py -f {image} --profile={profile} pslist"),
        (STAY, VOL + " windows.info"),
        (STAY, "head -n 20 {outdir}/pslist.txt"),
        (RESET, "rm -f {outdir}/pslist.txt"),
    )),
    WorkflowStep(20, "AWK feature extraction", False, 15, (
        (PROGRESS, "awk 'NR>4 {print $1, $2, $3, $4}' {outdir}/pslist.txt > {outdir}/features.txt"),
        (SIDE, "awk 'NR>4 && $3 == 4 {print $1, $2}' {outdir}/pslist.txt"),
        (SIDE, "awk 'NR>4 {count[$3]++} END {for (p in count) print p, count[p]}' {outdir}/pslist.txt"),
        (ERROR, "awk -f {outdir}/features.awk {outdir}/pslist.txt"),
        (STAY, "wc -l {outdir}/pslist.txt"),
        (STAY, "sort -k2 -n {outdir}/pslist.txt"),
        (STAY, "grep -i exe {outdir}/pslist.txt"),
        (RESET, "rm -f {outdir}/features.txt"),
    )),
    WorkflowStep(25, "suspicious process selection", False, 15, (
        (STAY, "cat {outdir}/features.txt"),
        (SIDE, VOL + " windows.cmdline > {outdir}/cmdline.txt"),
        (PROGRESS, VOL + " windows.cmdline --pid {pid}"),
        (ERROR, VOL + " windows.cmdline --pid {pid} --offset 0"),
        (SIDE, VOL + " windows.getsids --pid {pid}"),
        (STAY, "grep -w {pid} {outdir}/features.txt"),
        (RESET, "rm -f {outdir}/cmdline.txt"),
    )),
    WorkflowStep(30, "loaded DLL listing", False, 15, (
        (PROGRESS, VOL + " windows.dlllist --pid {pid}"),
        (SIDE, VOL + " windows.dlllist > {outdir}/dlllist.txt"),
        (SIDE, VOL + " windows.ldrmodules --pid {pid}"),
        (ERROR, VOL + " windows.dlllist --pid {pid} --dump"),
        (STAY, "grep -i temp {outdir}/dlllist.txt"),
        (STAY, "awk 'NR>4 {print $NF}' {outdir}/dlllist.txt"),
        (RESET, "rm -f {outdir}/dlllist.txt"),
    )),
    WorkflowStep(35, "open handles", False, 15, (
        (PROGRESS, VOL + " windows.handles --pid {pid}"),
        (SIDE, VOL + " windows.handles > {outdir}/handles.txt"),
        (ERROR, VOL + " windows.handles --pid {pid} --offset 0"),
        (SIDE, VOL + " windows.mutantscan"),
        (STAY, "grep -i mutant {outdir}/handles.txt"),
        (STAY, "grep -i key {outdir}/handles.txt"),
        (RESET, "rm -f {outdir}/handles.txt"),
    )),
    WorkflowStep(40, "network information", False, 15, (
        (SIDE, VOL + " windows.netscan > {outdir}/netscan.txt"),
        (PROGRESS, VOL + " windows.netstat"),
        (SIDE, VOL + " windows.netstat > {outdir}/netstat.txt"),
        (ERROR, VOL + " windows.netstat --include-corrupt"),
        (STAY, "grep ESTABLISHED {outdir}/netscan.txt"),
        (STAY, "grep -w {pid} {outdir}/netscan.txt"),
        (STAY, "awk 'NR>4 {print $5}' {outdir}/netscan.txt"),
        (RESET, "rm -f {outdir}/netscan.txt"),
    )),
    WorkflowStep(45, "registry hive analysis", False, 15, (
        (STAY, VOL + " windows.registry.hivelist"),
        (SIDE, VOL + " windows.registry.hivescan"),
        (STAY, VOL + " windows.registry.hivelist > {outdir}/hivelist.txt"),
        (PROGRESS, VOL + " windows.registry.printkey --key \"Software\\Microsoft\\Windows\\CurrentVersion\\Run\""),
        (SIDE, VOL + " windows.registry.userassist"),
        (ERROR, VOL + " windows.registry.printkey --offset 0"),
        (STAY, VOL + " windows.registry.printkey"),
        (STAY, VOL + " windows.registry.printkey --key \"ControlSet001\\Services\""),
        (STAY, "grep -i ntuser {outdir}/hivelist.txt"),
        (RESET, "rm -f {outdir}/hivelist.txt"),
    )),
    WorkflowStep(50, "process dump", True, 15, (
        (PROGRESS, VOL + " -o {outdir} windows.pslist --pid {pid} --dump"),
        (ERROR, VOL + " -o {outdir} windows.procdump --pid {pid}"),
        (SIDE, VOL + " windows.malfind --pid {pid}"),
        (SIDE, VOL + " -o {outdir} windows.memmap --pid {pid} --dump"),
        (SIDE, VOL + " windows.modules"),
        (SIDE, VOL + " windows.svcscan"),
        (SIDE, VOL + " windows.filescan > {outdir}/filescan.txt"),
        (SIDE, VOL + " windows.privileges --pid {pid}"),
        (SIDE, VOL + " windows.vadinfo --pid {pid}"),
        (RESET, "rm -f {outdir}/pid.{pid}.*"),
    )),
    WorkflowStep(60, "hash submission and string search", False, 15, (
        (STAY, "sha256sum {outdir}/pid.{pid}.exe"),
        (PROGRESS, "vt-lookup {outdir}/pid.{pid}.exe"),
        (ERROR, "vt-lookup {outdir}/pid.{pid}.dmp"),
        (SIDE, "strings -el {outdir}/pid.{pid}.dmp | grep -i http"),
        (SIDE, "grep -a -i -E 'wannacry|wncry|cerber|cridex' {outdir}/pid.{pid}.dmp"),
        (SIDE, "strings {image} | grep -i -E 'bitcoin|ransom|\\.onion'"),
        (RESET, "rm -f {outdir}/pid.{pid}.dmp"),
    )),
)

TERMINAL_COMMANDS: Tuple[str, ...] = (
    "sha256sum {outdir}/* > {outdir}/evidence.sha256",
    "tar -czf {outdir}.tar.gz {outdir}",
    VOL + " timeliner.Timeliner > {outdir}/timeline.csv",
    "cat {outdir}/evidence.sha256",
    "ls -la {outdir}",
    "echo investigation complete for {image}",
)

PATH_STATES: Tuple[int, ...] = tuple(step.state for step in WORKFLOW) + (TERMINAL_STATE,)


def _edge(next_state: int, probability: float = 1.0) -> Transition:
    if next_state == TERMINAL_STATE:
        return Transition(probability, next_state, TERMINAL_REWARD, True)
    return Transition(probability, next_state, DEFAULT_STEP_REWARD, False)


def _progress(state: int, next_state: int, risky: bool) -> Tuple[Transition, ...]:
    if not risky:
        return (_edge(next_state),)
    # Échec : on reste sur l'état pour déboguer
    return (_edge(next_state, RISKY_SUCCESS), _edge(state, round(1.0 - RISKY_SUCCESS, 10)))


def _returning(state: int, home: int, others: List[int]) -> Dict[Tuple[int, int], Tuple[Transition, ...]]:
    targets = list(others)
    targets.insert(state % (len(others) + 1), home)
    return {(state, action): (_edge(target),) for action, target in enumerate(targets)}


def default_menu_entries() -> Dict[int, List[str]]:
    """Gabarits de commandes par état (menu livré)."""
    entries = {step.state: [template for _role, template in step.commands] for step in WORKFLOW}
    entries[TERMINAL_STATE] = list(TERMINAL_COMMANDS)
    return entries


def build_default_graph() -> WorkflowGraph:
    """Construit le graphe unifié à 67 états."""
    transitions: Dict[Tuple[int, int], Tuple[Transition, ...]] = {}
    labels: Dict[int, str] = {}
    slots: Dict[int, int] = {}

    for index, step in enumerate(WORKFLOW):
        next_state = PATH_STATES[index + 1]
        gap = list(range(step.state + 1, next_state))
        error_state = gap[0]
        debug_state = gap[1] if len(gap) > 1 else None
        sides = gap[2:]
        pending_sides = list(sides)

        labels[step.state] = step.phase
        slots[step.state] = len(step.commands)

        for action, (role, _template) in enumerate(step.commands):
            if role == PROGRESS:
                edges = _progress(step.state, next_state, step.risky)
            elif role == ERROR:
                edges = (_edge(error_state),)
            elif role == SIDE:
                edges = (_edge(pending_sides.pop(0)),)
            elif role == STAY:
                edges = (_edge(step.state),)
            elif role == RESET:
                edges = (_edge(step.reset_to),)
            else:
                raise ValueError(f"Rôle inconnu : {role}")
            transitions[(step.state, action)] = edges

        if pending_sides:
            raise ValueError(f"États annexes non reliés pour l'état {step.state} : {pending_sides}")

        # État d'erreur : réessayer, déboguer ou recommencer la phase
        resets = [step.reset_to] if step.reset_to is not None else []
        labels[error_state] = f"{step.phase}: error"
        debug = [debug_state] if debug_state is not None else []
        transitions.update(_returning(error_state, step.state, debug + resets))

        if debug_state is not None:
            labels[debug_state] = f"{step.phase}: debugging"
            transitions.update(_returning(debug_state, step.state, resets))

        for side in sides:
            labels[side] = f"{step.phase}: output review"
            transitions.update(_returning(side, step.state, [error_state]))

    labels[TERMINAL_STATE] = "investigation complete"
    slots[TERMINAL_STATE] = len(TERMINAL_COMMANDS)

    return WorkflowGraph(
        num_states=NUM_STATES,
        num_actions=NUM_ACTIONS,
        transitions=transitions,
        terminal_states=frozenset({TERMINAL_STATE}),
        milestones=dict(MILESTONES),
        state_labels=labels,
        command_slots=slots,
    )
